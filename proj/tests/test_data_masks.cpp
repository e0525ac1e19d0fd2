#include <gtest/gtest.h>

#include <fstream>
#include <opencv2/imgcodecs.hpp>

#include "lbam/data.hpp"
#include "lbam/error.hpp"
#include "lbam/masks.hpp"
#include "lbam/ops.hpp"
#include "test_util.hpp"

using namespace lbam;
using lbam::testing::fixture_dir;
using lbam::testing::random_tensor;
using lbam::testing::TempDir;

namespace {

Tensor mask_with_holes(int64_t size, int64_t holes) {
  Tensor m = Tensor::ones({1, size, size});
  for (int64_t i = 0; i < holes; ++i) m.mutable_data()[i] = 0.0f;
  return m;
}

}  // namespace

TEST(Manifest, DirectoryAndFile) {
  const DatasetManifest d = DatasetManifest::from_directory(fixture_dir() / "images");
  ASSERT_EQ(d.size(), 8u);
  EXPECT_TRUE(std::is_sorted(d.files.begin(), d.files.end()));
  EXPECT_EQ(d.files.front(), "astronaut.jpg");
  TempDir dir;
  std::ofstream(dir / "list.txt") << "# comment\nb.png\n\n  a.png  \nb.png\n";
  const DatasetManifest m = DatasetManifest::from_file(dir / "list.txt", "val", 3);
  EXPECT_EQ(m.files, (std::vector<std::string>{"a.png", "b.png"}));
  EXPECT_EQ(m.path(0), dir.path() / "a.png");
  EXPECT_EQ(m.split, "val");
  EXPECT_THROW(DatasetManifest::from_file(dir / "none.txt"), IoError);
  EXPECT_THROW(DatasetManifest::from_directory(dir / "none"), IoError);
}

TEST(Crop, OffsetsRangeAndDeterminism) {
  TempDir dir;
  cv::Mat square(350, 350, CV_8UC3);
  cv::randu(square, 0, 256);
  cv::imwrite((dir / "sq.png").string(), square);
  int64_t max_x = 0, max_y = 0;
  for (uint64_t seed = 0; seed < 200; ++seed) {
    CropInfo info;
    const Tensor t = load_and_crop(dir / "sq.png", seed, {}, &info);
    EXPECT_EQ(info.resized_width, 350);
    EXPECT_GE(info.x, 0);
    EXPECT_LE(info.x, 94);
    EXPECT_GE(info.y, 0);
    EXPECT_LE(info.y, 94);
    max_x = std::max(max_x, info.x);
    max_y = std::max(max_y, info.y);
    if (seed < 3) {
      ASSERT_EQ(t.shape(), (Shape{3, 256, 256}));
      for (float v : t.values()) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
    }
  }
  EXPECT_GT(max_x, 80);
  EXPECT_GT(max_y, 80);
  const Tensor a = load_and_crop(dir / "sq.png", 9), b = load_and_crop(dir / "sq.png", 9);
  EXPECT_EQ(ops::max_abs_diff(a, b), 0.0f);
}

TEST(Crop, PixelsMatchSourceAndFlip) {
  TempDir dir;
  cv::Mat img(256, 300, CV_8UC3);
  cv::randu(img, 0, 256);
  cv::imwrite((dir / "img.png").string(), img);
  CropOptions opt{128, 256, true};
  bool saw_flip = false, saw_plain = false;
  for (uint64_t seed = 0; seed < 16; ++seed) {
    CropInfo info;
    const Tensor t = load_and_crop(dir / "img.png", seed, opt, &info);
    (info.flipped ? saw_flip : saw_plain) = true;
    // no resize since the short side already equals min_side
    for (int64_t y : {0L, 77L, 127L}) {
      for (int64_t x : {0L, 5L, 127L}) {
        const int64_t sx = info.flipped ? info.x + 127 - x : info.x + x;
        const cv::Vec3b px = img.at<cv::Vec3b>(static_cast<int>(info.y + y), static_cast<int>(sx));
        EXPECT_NEAR(t.at({0, y, x}), px[2] / 127.5 - 1.0, 1e-6);
        EXPECT_NEAR(t.at({2, y, x}), px[0] / 127.5 - 1.0, 1e-6);
      }
    }
  }
  EXPECT_TRUE(saw_flip);
  EXPECT_TRUE(saw_plain);
  EXPECT_THROW(load_and_crop(dir / "img.png", 0, {300, 256, false}), ConfigError);
}

TEST(Crop, UndecodableNamesPath) {
  TempDir dir;
  std::ofstream(dir / "broken.png") << "not an image";
  try {
    load_and_crop(dir / "broken.png", 0);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.png"), std::string::npos);
  }
}

TEST(ImageIo, PngRoundTripIsExact) {
  TempDir dir;
  cv::Mat img(16, 24, CV_8UC3);
  cv::randu(img, 0, 256);
  cv::imwrite((dir / "x.png").string(), img);
  const Tensor t = load_image(dir / "x.png");
  save_image(t, dir / "y.png");
  const cv::Mat back = cv::imread((dir / "y.png").string());
  EXPECT_EQ(cv::norm(img, back, cv::NORM_INF), 0.0);
  const Tensor decoded = decode_image(encode_png(t));
  EXPECT_EQ(ops::max_abs_diff(decoded, t), 0.0f);
  EXPECT_THROW(decode_image({}), IoError);
  EXPECT_THROW(save_image(t, "/proc/no/such/dir/x.png"), IoError);
}

TEST(Stack, ShapesAndErrors) {
  const Tensor s = stack({Tensor::ones({2, 3}), Tensor::zeros({2, 3})});
  EXPECT_EQ(s.shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(s.at({0, 1, 2}), 1.0f);
  EXPECT_THROW(stack({}), ShapeError);
  EXPECT_THROW(stack({Tensor::ones({2}), Tensor::ones({3})}), ShapeError);
}

TEST(MaskRatio, Buckets) {
  EXPECT_EQ(canonical_buckets().size(), 4u);
  EXPECT_EQ(canonical_buckets()[0].label(), "(0.1,0.2]");
  // 19,660 / 65,536 = 0.29998… lies in (0.2,0.3]
  const double r = compute_mask_ratio(mask_with_holes(256, 19660));
  EXPECT_EQ(r, 19660.0 / 65536.0);
  EXPECT_EQ(bucket_of(r), (RatioBucket{0.2, 0.3}));
  // 19,661 / 65,536 = 0.300003… already exceeds 0.3
  EXPECT_GT(compute_mask_ratio(mask_with_holes(256, 19661)), 0.3);
  EXPECT_EQ(bucket_of(compute_mask_ratio(mask_with_holes(256, 19661))), (RatioBucket{0.3, 0.4}));
  EXPECT_EQ(compute_mask_ratio(Tensor::ones({1, 8, 8})), 0.0);
  EXPECT_FALSE(bucket_of(0.0).has_value());
  EXPECT_EQ(bucket_of(0.2), (RatioBucket{0.1, 0.2}));
  EXPECT_FALSE(bucket_of(0.55).has_value());
  // batched and 3-channel masks count pixels once
  Tensor m3 = Tensor::ones({2, 3, 2, 2});
  m3.mutable_data()[0] = 0.0f;
  m3.mutable_data()[12 + 1] = 0.0f;
  EXPECT_DOUBLE_EQ(compute_mask_ratio(m3), 2.0 / 8.0);
}

TEST(MaskRatio, ParseBucket) {
  EXPECT_EQ(parse_bucket("0.1-0.2"), (RatioBucket{0.1, 0.2}));
  EXPECT_EQ(parse_bucket("(0.3,0.4]"), (RatioBucket{0.3, 0.4}));
  EXPECT_EQ(parse_bucket("0.4:0.5"), (RatioBucket{0.4, 0.5}));
  EXPECT_THROW(parse_bucket("0.5"), ConfigError);
  EXPECT_THROW(parse_bucket("0.3-0.2"), ConfigError);
  EXPECT_THROW(parse_bucket("a-b"), ConfigError);
  EXPECT_THROW(parse_bucket("0.1-1.5"), ConfigError);
}

TEST(MaskGeneration, LandsInBucketAndIsDeterministic) {
  for (const RatioBucket& b : canonical_buckets()) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      const Tensor m = generate_irregular_mask(b, seed);
      ASSERT_EQ(m.shape(), (Shape{1, 256, 256}));
      EXPECT_TRUE(b.contains(compute_mask_ratio(m))) << b.label() << " seed " << seed;
    }
    EXPECT_EQ(ops::max_abs_diff(generate_irregular_mask(b, 7), generate_irregular_mask(b, 7)), 0.0f);
  }
  const Tensor small = generate_irregular_mask({0.2, 0.3}, 1, {128, 100});
  EXPECT_EQ(small.shape(), (Shape{1, 128, 128}));
  EXPECT_TRUE((RatioBucket{0.2, 0.3}).contains(compute_mask_ratio(small)));
  for (float v : small.values()) ASSERT_TRUE(v == 0.0f || v == 1.0f);
}

TEST(MaskGeneration, ImpossibleBucketFails) {
  EXPECT_THROW(generate_irregular_mask({0.0, 0.0}, 1, {64, 5}), Error);
  EXPECT_THROW(generate_irregular_mask({0.2, 0.3}, 1, {8, 5}), ConfigError);
}

TEST(MaskIo, FixtureDecodesToReferenceBitmap) {
  const std::filesystem::path png = fixture_dir() / "masks" / "brush_128.png";
  const Tensor m = load_mask(png);
  ASSERT_EQ(m.shape(), (Shape{1, 128, 128}));
  std::ifstream ref(fixture_dir() / "masks" / "brush_128_holes.txt");
  std::string line;
  int64_t y = 0, mismatches = 0, holes = 0;
  while (std::getline(ref, line)) {
    ASSERT_EQ(line.size(), 128u);
    for (int64_t x = 0; x < 128; ++x) {
      const bool hole = line[static_cast<size_t>(x)] == '1';
      holes += hole;
      mismatches += (m.at({0, y, x}) == 0.0f) != hole;
    }
    ++y;
  }
  EXPECT_EQ(y, 128);
  EXPECT_GT(holes, 0);
  EXPECT_EQ(mismatches, 0);
  std::ifstream in(png, std::ios::binary);
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  EXPECT_EQ(ops::max_abs_diff(decode_mask(bytes), m), 0.0f);
}

TEST(MaskIo, RoundTripAndListing) {
  TempDir dir;
  const Tensor m = generate_irregular_mask({0.1, 0.2}, 3, {64, 100});
  save_mask(m, dir / "b.png");
  save_mask(m, dir / "a.png");
  std::ofstream(dir / "note.txt") << "x";
  EXPECT_EQ(ops::max_abs_diff(load_mask(dir / "a.png"), m), 0.0f);
  EXPECT_EQ(ops::max_abs_diff(decode_mask(encode_mask_png(m)), m), 0.0f);
  const auto files = list_masks(dir.path());
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].filename(), "a.png");
  TempDir empty;
  EXPECT_THROW(list_masks(empty.path()), IoError);
  EXPECT_THROW(decode_mask({1, 2, 3}), IoError);
}

TEST(NetworkInput, ProductAndReplication) {
  const Tensor img = random_tensor({3, 4, 4}, 1);
  EXPECT_EQ(ops::max_abs_diff(compose_network_input(img, Tensor::ones({1, 4, 4})).image, img), 0.0f);
  EXPECT_EQ(ops::sum_value(ops::abs(compose_network_input(img, Tensor::zeros({1, 4, 4})).image)), 0.0);
  Tensor checker = Tensor::zeros({1, 4, 4});
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x) checker.mutable_data()[y * 4 + x] = static_cast<float>((x + y) % 2);
  const NetworkInput in = compose_network_input(img, checker);
  EXPECT_EQ(in.mask.shape(), (Shape{3, 4, 4}));
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 4; ++x) {
        EXPECT_EQ(in.image.at({c, y, x}), img.at({c, y, x}) * static_cast<float>((x + y) % 2));
        EXPECT_EQ(in.mask.at({c, y, x}), static_cast<float>((x + y) % 2));
      }
  const NetworkInput batched = compose_network_input(random_tensor({2, 3, 4, 4}, 2), Tensor::ones({2, 1, 4, 4}));
  EXPECT_EQ(batched.image.shape(), (Shape{2, 3, 4, 4}));
  EXPECT_THROW(compose_network_input(img, Tensor::ones({1, 2, 2})), ShapeError);
}
