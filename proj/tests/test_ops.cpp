#include <gtest/gtest.h>

#include "lbam/error.hpp"
#include "test_util.hpp"

using namespace lbam;
using lbam::testing::max_grad_error;
using lbam::testing::random_tensor;

namespace {

Tensor sq_sum(const Tensor& t) { return ops::sum(ops::square(t)); }

}  // namespace

TEST(Tensor, FactoriesAndShape) {
  const Tensor t = Tensor::full({2, 3}, 1.5f);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.size(-1), 3);
  EXPECT_FLOAT_EQ(t.at({1, 2}), 1.5f);
  EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_EQ(shape_str({1, 2}), "[1x2]");
}

TEST(Tensor, DetachSharesCloneCopies) {
  const Tensor t = Tensor::zeros({3});
  Tensor d = t.detach();
  Tensor c = t.clone();
  d.mutable_data()[0] = 5;
  EXPECT_FLOAT_EQ(t.data()[0], 5);
  EXPECT_FLOAT_EQ(c.data()[0], 0);
}

TEST(Ops, BroadcastArithmetic) {
  const Tensor a = Tensor::from_data({2, 1}, {1, 2});
  const Tensor b = Tensor::from_data({1, 3}, {10, 20, 30});
  const Tensor s = a + b;
  ASSERT_EQ(s.shape(), (Shape{2, 3}));
  EXPECT_FLOAT_EQ(s.at({1, 2}), 32);
  EXPECT_FLOAT_EQ((a * b).at({1, 0}), 20);
  EXPECT_FLOAT_EQ((b / a).at({1, 1}), 10);
  EXPECT_FLOAT_EQ((1.0 - a).at({1, 0}), -1);
  EXPECT_THROW(Tensor::zeros({2, 3}) + Tensor::zeros({4}), ShapeError);
}

TEST(Ops, ReductionsAndViews) {
  const Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_FLOAT_EQ(ops::sum(t).item(), 21);
  EXPECT_FLOAT_EQ(ops::mean(t).item(), 3.5);
  const Tensor rows = ops::sum_dims(t, {1}, false);
  EXPECT_EQ(rows.shape(), (Shape{2}));
  EXPECT_FLOAT_EQ(rows.data()[1], 15);
  EXPECT_FLOAT_EQ(ops::mean_dims(t, {0}, true).at({0, 2}), 4.5);
  const Tensor r = ops::reshape(t, {3, -1});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  const Tensor c = ops::concat({t, t}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 6}));
  EXPECT_FLOAT_EQ(c.at({1, 4}), 5);
  const Tensor s = ops::slice(c, 1, 2, 3);
  EXPECT_FLOAT_EQ(s.at({0, 0}), 3);
  EXPECT_FLOAT_EQ(s.at({0, 1}), 1);
  const Tensor e = ops::embed(t, 0, 1, 4);
  EXPECT_EQ(e.shape(), (Shape{4, 3}));
  EXPECT_FLOAT_EQ(e.at({0, 0}), 0);
  EXPECT_FLOAT_EQ(e.at({2, 2}), 6);
}

TEST(Ops, ElementwiseGradients) {
  const Tensor x = random_tensor({2, 3}, 1, 0.2, 1.5);
  const std::vector<std::function<Tensor(const Tensor&)>> fns = {
      [](const Tensor& t) { return ops::exp(t); },
      [](const Tensor& t) { return ops::log(t); },
      [](const Tensor& t) { return ops::sqrt(t); },
      [](const Tensor& t) { return ops::pow(t, 2.5); },
      [](const Tensor& t) { return ops::tanh(t); },
      [](const Tensor& t) { return ops::sigmoid(t); },
      [](const Tensor& t) { return ops::abs(t - 0.7); },
      [](const Tensor& t) { return ops::leaky_relu(t - 0.7, 0.2); },
      [](const Tensor& t) { return ops::relu(t - 0.7); },
      [](const Tensor& t) { return Tensor::ones(t.shape()) / t; },
  };
  for (size_t i = 0; i < fns.size(); ++i) {
    const double err = max_grad_error(
        [&](const std::vector<Tensor>& in) { return ops::sum(fns[i](in[0]) * fns[i](in[0])); }, {x}, 1e-3);
    EXPECT_LT(err, 5e-3) << "function " << i;
  }
}

TEST(Ops, BroadcastGradientsSumToInputShape) {
  const double err = max_grad_error(
      [](const std::vector<Tensor>& in) { return sq_sum(in[0] * in[1] + in[0]); },
      {random_tensor({2, 1, 3}, 2), random_tensor({1, 4, 1}, 3)}, 1e-3);
  EXPECT_LT(err, 5e-3);
}

TEST(Ops, ConvMatchesLoopOracle) {
  const Tensor x = random_tensor({2, 3, 8, 8}, 4);
  const Tensor w = random_tensor({5, 3, 4, 4}, 5);
  const Tensor y = ops::conv2d(x, w, {2, 1});
  ASSERT_EQ(y.shape(), (Shape{2, 5, 4, 4}));
  EXPECT_LT(lbam::testing::max_diff(y, lbam::testing::conv_oracle(x, w, 2, 1)), 1e-5);
  const Tensor y1 = ops::conv2d(x, ops::slice(w, 2, 0, 3), {1, 0});
  EXPECT_THROW(ops::conv2d(x, random_tensor({5, 2, 4, 4}, 6), {2, 1}), ShapeError);
  EXPECT_EQ(y1.size(2), 6);
}

TEST(Ops, ConvTransposeIsAdjoint) {
  const Tensor x = random_tensor({2, 3, 8, 8}, 7);
  const Tensor w = random_tensor({5, 3, 4, 4}, 8);
  const Tensor y = random_tensor({2, 5, 4, 4}, 9);
  const double lhs = ops::sum_value(ops::conv2d(x, w, {2, 1}) * y);
  // conv_transpose2d takes in × out kernels: the conv's O×C kernel read as C_in=O, C_out=C.
  const double rhs = ops::sum_value(x * ops::conv_transpose2d(y, w, {2, 1}, {8, 8}));
  EXPECT_NEAR(lhs, rhs, 1e-3 * std::max(1.0, std::abs(lhs)));
}

TEST(Ops, ConvGradients) {
  const double err = max_grad_error(
      [](const std::vector<Tensor>& in) { return sq_sum(ops::conv2d(in[0], in[1], {2, 1})); },
      {random_tensor({1, 2, 6, 6}, 10), random_tensor({3, 2, 4, 4}, 11)}, 1e-2);
  EXPECT_LT(err, 1e-2);
  const double err_t = max_grad_error(
      [](const std::vector<Tensor>& in) { return sq_sum(ops::conv_transpose2d(in[0], in[1], {2, 1})); },
      {random_tensor({1, 3, 3, 3}, 12), random_tensor({3, 2, 4, 4}, 13)}, 1e-2);
  EXPECT_LT(err_t, 1e-2);
}

TEST(Ops, ConvDoubleBackward) {
  // d/dw of ||∂/∂x sum(conv(x,w)²)||² against finite differences in w.
  const Tensor x0 = random_tensor({1, 2, 6, 6}, 14);
  auto penalty = [&](const std::vector<Tensor>& in) {
    GradModeGuard on(true);
    Tensor x = x0.clone();
    x.set_requires_grad(true);
    GradOptions o;
    o.create_graph = true;
    const Tensor g = grad(sq_sum(ops::conv2d(x, in[0], {2, 1})), {x}, o)[0];
    return sq_sum(g);
  };
  EXPECT_LT(max_grad_error(penalty, {random_tensor({3, 2, 4, 4}, 15)}, 1e-2), 2e-2);
}

TEST(Ops, SmoothOpsDoubleBackward) {
  const Tensor x0 = random_tensor({4}, 16, 0.3, 1.2);
  for (int which = 0; which < 4; ++which) {
    auto second = [&](const std::vector<Tensor>& in) {
      const Tensor x = in[0];
      Tensor y;
      switch (which) {
        case 0: y = ops::exp(x); break;
        case 1: y = ops::sqrt(x); break;
        case 2: y = ops::tanh(x); break;
        default: y = ops::sigmoid(x); break;
      }
      GradOptions o;
      o.create_graph = true;
      return ops::sum(grad(ops::sum(y * y), {x}, o)[0]);
    };
    Tensor x = x0.clone();
    x.set_requires_grad(true);
    const Tensor analytic = grad(second({x}), {x})[0];
    for (int64_t k = 0; k < x0.numel(); ++k) {
      const double h = 1e-3;
      Tensor up = x0.clone();
      up.mutable_data()[k] += static_cast<float>(h);
      Tensor down = x0.clone();
      down.mutable_data()[k] -= static_cast<float>(h);
      up.set_requires_grad(true);
      down.set_requires_grad(true);
      const double numeric = (second({up}).item() - second({down}).item()) / (2 * h);
      EXPECT_NEAR(analytic.data()[k], numeric, 2e-2 * std::max(1.0, std::abs(numeric))) << which;
    }
  }
}

TEST(Ops, MaxPoolForwardBackward) {
  const Tensor x = Tensor::from_data({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 8, 7});
  const Tensor y = ops::max_pool2d(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_FLOAT_EQ(y.data()[0], 5);
  EXPECT_FLOAT_EQ(y.data()[1], 8);
  Tensor xv = x.clone();
  xv.set_requires_grad(true);
  const Tensor g = grad(ops::sum(ops::max_pool2d(xv)), {xv})[0];
  EXPECT_FLOAT_EQ(g.data()[1], 1);
  EXPECT_FLOAT_EQ(g.data()[6], 1);
  EXPECT_FLOAT_EQ(g.data()[0], 0);
  GradOptions o;
  o.create_graph = true;
  EXPECT_THROW(grad(ops::sum(ops::square(ops::max_pool2d(xv))), {xv}, o), Error);
}

TEST(Ops, BmmMatchesLoops) {
  const Tensor a = random_tensor({2, 3, 4}, 17);
  const Tensor b = random_tensor({2, 5, 4}, 18);
  const Tensor c = ops::bmm(a, b, false, true);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 5; ++j) {
        double s = 0;
        for (int64_t k = 0; k < 4; ++k) s += a.at({n, i, k}) * b.at({n, j, k});
        EXPECT_NEAR(c.at({n, i, j}), s, 1e-5);
      }
  EXPECT_LT(max_grad_error([](const std::vector<Tensor>& in) { return sq_sum(ops::bmm(in[0], in[1], true, false)); },
                           {random_tensor({1, 3, 2}, 19), random_tensor({1, 3, 4}, 20)}, 1e-2),
            1e-2);
}

TEST(Autograd, GradOfUnusedInputIsZero) {
  Tensor a = Tensor::ones({2});
  Tensor b = Tensor::ones({3});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  const auto g = grad(ops::sum(a * 2.0), {a, b});
  EXPECT_FLOAT_EQ(g[0].data()[0], 2);
  EXPECT_FLOAT_EQ(ops::sum_value(g[1]), 0);
}

TEST(Autograd, BackwardAccumulatesIntoLeaves) {
  Tensor a = Tensor::from_data({2}, {1, 2});
  a.set_requires_grad(true);
  ops::sum(ops::square(a)).backward();
  ops::sum(ops::square(a)).backward();
  EXPECT_FLOAT_EQ(a.grad().data()[1], 8);
  a.zero_grad();
  EXPECT_TRUE(!a.grad().defined() || ops::sum_value(a.grad()) == 0.0);
}

TEST(Autograd, NoGradGuardStopsRecording) {
  Tensor a = Tensor::ones({2});
  a.set_requires_grad(true);
  NoGradGuard guard;
  EXPECT_FALSE((a * 2.0).requires_grad());
}

TEST(Ops, FiniteQueries) {
  Tensor t = Tensor::zeros({3});
  EXPECT_TRUE(ops::all_finite(t));
  t.mutable_data()[1] = std::nanf("");
  EXPECT_FALSE(ops::all_finite(t));
}
