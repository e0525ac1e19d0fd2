#include "lbam/training.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <numeric>

#include "lbam/autograd.hpp"
#include "lbam/error.hpp"
#include "lbam/masks.hpp"
#include "lbam/ops.hpp"
#include "lbam/random.hpp"

namespace lbam {

namespace {

// Stream tags for derive_seed.
constexpr uint64_t kTagGenerator = 1;
constexpr uint64_t kTagCritic = 2;
constexpr uint64_t kTagExtractor = 3;
constexpr uint64_t kTagOrder = 4;
constexpr uint64_t kTagSample = 5;
constexpr uint64_t kTagPenalty = 6;

void check_unknown_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& prefix) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!reference.contains(it.key())) throw ConfigError(fmt::format("unknown config key '{}'", key));
    if (reference.at(it.key()).is_object()) {
      if (!it.value().is_object()) throw ConfigError(fmt::format("config key '{}' must be an object", key));
      check_unknown_keys(it.value(), reference.at(it.key()), key);
    }
  }
}

void finite_or_throw(const Tensor& value, const char* term) {
  const float v = value.item();
  if (!std::isfinite(v)) throw NumericError(fmt::format("non-finite {} loss ({})", term, v));
}

void set_trainable(const std::vector<NamedTensor>& params, bool on) {
  for (NamedTensor p : params) p.tensor.set_requires_grad(on);
}

nn::AdamOptions adam_options(const TrainConfig& c) {
  nn::AdamOptions o;
  o.lr = c.lr;
  o.beta1 = c.beta1;
  o.beta2 = c.beta2;
  return o;
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"weights",
           {{"l1", c.weights.l1},
            {"adv", c.weights.adv},
            {"perc", c.weights.perc},
            {"style", c.weights.style},
            {"gp_lambda", c.weights.gp_lambda}}},
          {"critic_steps", c.critic_steps},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"clip_norm", c.clip_norm},
          {"image_size", c.image_size},
          {"min_side", c.min_side},
          {"augment", c.augment},
          {"fixed_samples", c.fixed_samples},
          {"shuffle", c.shuffle},
          {"mask_dir", c.mask_dir},
          {"vgg_weights", c.vgg_weights},
          {"critic_head", c.critic_head},
          {"generator", to_json(c.generator)},
          {"max_steps", c.max_steps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  nlohmann::json merged = to_json(TrainConfig{});
  check_unknown_keys(j, merged, "");
  merged.merge_patch(j);
  TrainConfig c;
  try {
    c.lr = merged.at("lr").get<double>();
    c.beta1 = merged.at("beta1").get<double>();
    c.beta2 = merged.at("beta2").get<double>();
    c.batch_size = merged.at("batch_size").get<int64_t>();
    c.epochs = merged.at("epochs").get<int64_t>();
    const auto& w = merged.at("weights");
    c.weights.l1 = w.at("l1").get<double>();
    c.weights.adv = w.at("adv").get<double>();
    c.weights.perc = w.at("perc").get<double>();
    c.weights.style = w.at("style").get<double>();
    c.weights.gp_lambda = w.at("gp_lambda").get<double>();
    c.critic_steps = merged.at("critic_steps").get<int64_t>();
    c.seed = merged.at("seed").get<uint64_t>();
    c.checkpoint_every = merged.at("checkpoint_every").get<int64_t>();
    c.clip_norm = merged.at("clip_norm").get<double>();
    c.image_size = merged.at("image_size").get<int64_t>();
    c.min_side = merged.at("min_side").get<int64_t>();
    c.augment = merged.at("augment").get<bool>();
    c.fixed_samples = merged.at("fixed_samples").get<bool>();
    c.shuffle = merged.at("shuffle").get<bool>();
    c.mask_dir = merged.at("mask_dir").get<std::string>();
    c.vgg_weights = merged.at("vgg_weights").get<std::string>();
    c.critic_head = merged.at("critic_head").get<std::string>();
    c.generator = generator_config_from_json(merged.at("generator"));
    c.max_steps = merged.at("max_steps").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("invalid training config: {}", e.what()));
  }
  return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' is not of the form key=value", assignment));
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &j;
  size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(fmt::format("override key '{}' is malformed", key));
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

TrainConfig load_train_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open config {}", path.string()));
    j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(fmt::format("{} is not valid JSON", path.string()));
  }
  for (const std::string& o : overrides) apply_override(j, o);
  TrainConfig c = train_config_from_json(j);
  validate(c);
  return c;
}

void validate(const TrainConfig& c) {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
  };
  require(c.lr > 0.0, "lr must be positive");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0, "beta1 must lie in [0,1)");
  require(c.beta2 >= 0.0 && c.beta2 < 1.0, "beta2 must lie in [0,1)");
  require(c.batch_size >= 1, "batch_size must be at least 1");
  require(c.epochs >= 1, "epochs must be at least 1");
  require(c.weights.l1 >= 0 && c.weights.adv >= 0 && c.weights.perc >= 0 && c.weights.style >= 0 &&
              c.weights.gp_lambda >= 0,
          "loss weights must be non-negative");
  require(c.weights.l1 + c.weights.adv + c.weights.perc + c.weights.style > 0.0, "all loss weights are zero");
  require(c.critic_steps >= 1, "critic_steps must be at least 1");
  require(c.checkpoint_every >= 1, "checkpoint_every must be at least 1");
  require(c.clip_norm > 0.0, "clip_norm must be positive");
  require(c.image_size > 0 && c.image_size % kSizeMultiple == 0,
          fmt::format("image_size must be a positive multiple of {}", kSizeMultiple));
  require(c.min_side >= c.image_size, "min_side must be at least image_size");
  require(c.generator.alpha >= 0.0, "generator.alpha must be non-negative");
  require(c.generator.init_std > 0.0, "generator.init_std must be positive");
  require(c.max_steps >= 0, "max_steps must be non-negative");
  parse_critic_head(c.critic_head);
}

std::vector<size_t> epoch_order(size_t count, const TrainConfig& config, int64_t epoch) {
  std::vector<size_t> order(count);
  std::iota(order.begin(), order.end(), size_t{0});
  if (config.shuffle) {
    Rng rng(derive_seed(config.seed, {kTagOrder, static_cast<uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng.engine());
  }
  return order;
}

Batch make_batch(const DatasetManifest& manifest, const TrainConfig& config, int64_t epoch,
                 const std::vector<size_t>& indices) {
  if (indices.empty()) throw ConfigError("empty batch");
  std::vector<std::filesystem::path> mask_files;
  if (!config.mask_dir.empty()) mask_files = list_masks(config.mask_dir);
  CropOptions crop;
  crop.crop = config.image_size;
  crop.min_side = config.min_side;
  crop.augment = config.augment;
  MaskOptions mask_options;
  mask_options.size = config.image_size;

  std::vector<Tensor> images;
  std::vector<Tensor> masks;
  for (size_t index : indices) {
    const uint64_t e = config.fixed_samples ? 0 : static_cast<uint64_t>(epoch);
    const uint64_t s = derive_seed(config.seed, {kTagSample, e, static_cast<uint64_t>(index)});
    images.push_back(load_and_crop(manifest.path(index), derive_seed(s, {1}), crop));
    Rng pick(derive_seed(s, {2}));
    Tensor mask;
    if (!mask_files.empty()) {
      const auto k = static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(mask_files.size()) - 1));
      mask = load_mask(mask_files[k]);
      if (mask.size(1) != config.image_size || mask.size(2) != config.image_size) {
        throw ShapeError(fmt::format("mask {} is {}, expected {}×{}", mask_files[k].string(),
                                     shape_str(mask.shape()), config.image_size, config.image_size));
      }
    } else {
      const auto& buckets = canonical_buckets();
      const auto b = static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(buckets.size()) - 1));
      mask = generate_irregular_mask(buckets[b], derive_seed(s, {3}), mask_options);
    }
    masks.push_back(mask);
  }
  return {stack(images), stack(masks), indices};
}

nlohmann::json StepMetrics::to_json() const {
  return {{"epoch", epoch},
          {"step", step},
          {"total", total},
          {"l1", l1},
          {"adv", adv},
          {"perc", perc},
          {"style", style},
          {"critic_loss", critic_loss},
          {"d_real", d_real},
          {"d_fake", d_fake},
          {"gp", gp},
          {"grad_norm_generator", grad_norm_generator},
          {"grad_norm_critic", grad_norm_critic}};
}

Trainer::Trainer(TrainConfig config) : config_(std::move(config)) {
  validate(config_);
  generator_ = LbamUNet::build(derive_seed(config_.seed, {kTagGenerator}), config_.generator);
  critic_ = TwoColumnCritic::build(derive_seed(config_.seed, {kTagCritic}), parse_critic_head(config_.critic_head),
                                   config_.image_size);
  if (config_.weights.perc > 0.0 || config_.weights.style > 0.0) {
    extractor_ = FeatureExtractor::from_config(config_.vgg_weights, derive_seed(config_.seed, {kTagExtractor}));
  }
  gen_opt_ = nn::Adam(generator_.parameters(), adam_options(config_));
  critic_opt_ = nn::Adam(critic_.parameters(), adam_options(config_));
}

StepContext Trainer::prepare(const Batch& batch) {
  StepContext ctx;
  ctx.gt = batch.images;
  ctx.mask = batch.masks;
  const Tensor input = ctx.gt * mask_to_rgb(ctx.mask);
  ctx.output = generator_.forward(input, ctx.mask, true);
  return ctx;
}

void Trainer::critic_update(const StepContext& ctx, StepMetrics& m) {
  const CriticFn d = critic_fn(critic_, true);
  for (int64_t k = 0; k < config_.critic_steps; ++k) {
    Rng rng(derive_seed(config_.seed, {kTagPenalty, static_cast<uint64_t>(step_), static_cast<uint64_t>(k)}));
    const CriticLossTerms terms = critic_loss(d, ctx.gt, ctx.output, ctx.mask, config_.weights.gp_lambda, rng);
    finite_or_throw(terms.penalty, "gradient penalty");
    finite_or_throw(terms.loss, "critic");
    critic_opt_.zero_grad();
    terms.loss.backward();
    m.grad_norm_critic = nn::clip_grad_norm(critic_opt_.parameters(), config_.clip_norm);
    critic_opt_.step();
    m.critic_loss = terms.loss.item();
    m.d_real = terms.d_real.item();
    m.d_fake = terms.d_fake.item();
    m.gp = terms.penalty.item();
  }
}

void Trainer::generator_update(const StepContext& ctx, StepMetrics& m) {
  const LossWeights& w = config_.weights;
  const Tensor zero = Tensor::scalar(0.0f);
  const Tensor l1 = pixel_l1(ctx.output, ctx.gt);
  finite_or_throw(l1, "l1");
  Tensor adv = zero;
  if (w.adv > 0.0) {
    set_trainable(critic_.parameters(), false);
    try {
      adv = generator_adv(critic_fn(critic_, true), ctx.output, ctx.mask);
    } catch (...) {
      set_trainable(critic_.parameters(), true);
      throw;
    }
    set_trainable(critic_.parameters(), true);
    finite_or_throw(adv, "adversarial");
  }
  Tensor perc = zero;
  Tensor style = zero;
  if (extractor_ && (w.perc > 0.0 || w.style > 0.0)) {
    std::vector<Tensor> gt_features;
    {
      NoGradGuard no_grad;
      gt_features = extractor_->features(ctx.gt);
    }
    const std::vector<Tensor> out_features = extractor_->features(ctx.output);
    if (w.perc > 0.0) perc = perceptual_loss(out_features, gt_features);
    if (w.style > 0.0) style = style_loss(out_features, gt_features);
    finite_or_throw(perc, "perceptual");
    finite_or_throw(style, "style");
  }
  const Tensor total = total_loss(l1, adv, perc, style, w);
  finite_or_throw(total, "total");
  gen_opt_.zero_grad();
  total.backward();
  m.grad_norm_generator = nn::clip_grad_norm(gen_opt_.parameters(), config_.clip_norm);
  gen_opt_.step();
  m.total = total.item();
  m.l1 = l1.item();
  m.adv = adv.item();
  m.perc = perc.item();
  m.style = style.item();
}

StepMetrics Trainer::step(const Batch& batch) {
  StepMetrics m;
  m.epoch = epoch_;
  m.step = step_ + 1;
  const StepContext ctx = prepare(batch);
  if (trains_critic()) critic_update(ctx, m);
  generator_update(ctx, m);
  ++step_;
  return m;
}

CheckpointRecord Trainer::checkpoint(int64_t epoch) const {
  CheckpointRecord r;
  r.config = to_json(config_);
  r.epoch = epoch;
  r.step = step_;
  r.generator = snapshot(generator_.state());
  r.critic = snapshot(critic_.state());
  r.generator_optimizer = snapshot(gen_opt_.state());
  r.critic_optimizer = snapshot(critic_opt_.state());
  return r;
}

void Trainer::restore(const CheckpointRecord& r) {
  restore_named(r.generator, generator_.state());
  restore_named(r.critic, critic_.state());
  gen_opt_.load_state(r.generator_optimizer);
  critic_opt_.load_state(r.critic_optimizer);
  step_ = r.step;
  epoch_ = r.epoch;
}

CheckpointRecord train(const DatasetManifest& manifest, const TrainConfig& config, const TrainOptions& options) {
  validate(config);
  if (manifest.size() == 0) throw ConfigError("training manifest is empty");
  const auto batch = static_cast<size_t>(config.batch_size);
  if (manifest.size() < batch) {
    throw ConfigError(fmt::format("manifest has {} images, fewer than batch_size {}", manifest.size(), batch));
  }
  const size_t batches_per_epoch = manifest.size() / batch;

  Trainer trainer(config);
  int64_t first_epoch = 1;
  if (!options.resume.empty()) {
    const CheckpointRecord r = load_checkpoint(options.resume);
    trainer.restore(r);
    first_epoch = r.epoch + 1;
  }

  std::filesystem::create_directories(options.out_dir);
  const std::filesystem::path log_path = options.out_dir / "metrics.jsonl";
  std::ofstream log(log_path, options.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError(fmt::format("cannot write {}", log_path.string()));

  auto write_checkpoint = [&](int64_t epoch) {
    const CheckpointRecord r = trainer.checkpoint(epoch);
    const auto path = options.out_dir / fmt::format("checkpoint_epoch{:04}.lbam", epoch);
    const auto latest = options.out_dir / "checkpoint_latest.lbam";
    save_checkpoint(r, path);
    std::error_code ec;
    std::filesystem::remove(latest, ec);
    std::filesystem::create_hard_link(path, latest, ec);
    if (ec) std::filesystem::copy_file(path, latest, std::filesystem::copy_options::overwrite_existing);
    return r;
  };

  CheckpointRecord last;
  int64_t epochs_run = 0;
  bool step_limit = false;
  for (int64_t epoch = first_epoch; epoch <= config.epochs && !step_limit; ++epoch) {
    const std::vector<size_t> order = epoch_order(manifest.size(), config, epoch);
    for (size_t b = 0; b < batches_per_epoch; ++b) {
      const std::vector<size_t> indices(order.begin() + static_cast<std::ptrdiff_t>(b * batch),
                                        order.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch));
      StepMetrics m = trainer.step(make_batch(manifest, config, epoch, indices));
      m.epoch = epoch;
      log << m.to_json().dump() << '\n';
      log.flush();
      if (!log) throw IoError(fmt::format("write to {} failed", log_path.string()));
      if (!options.quiet) {
        fmt::print("epoch {} step {} total {:.5f} l1 {:.5f}\n", epoch, m.step, m.total, m.l1);
      }
      if (options.on_step) options.on_step(m);
      if (config.max_steps > 0 && trainer.steps_done() >= config.max_steps) {
        step_limit = true;
        break;
      }
    }
    ++epochs_run;
    const bool final_epoch = epoch == config.epochs || step_limit;
    const bool stopping = options.stop_after_epochs > 0 && epochs_run >= options.stop_after_epochs;
    if (final_epoch || stopping || epoch % config.checkpoint_every == 0) last = write_checkpoint(epoch);
    if (stopping) break;
  }
  if (epochs_run == 0) last = trainer.checkpoint(first_epoch - 1);
  return last;
}

std::vector<StepMetrics> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::vector<StepMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw CorruptFileError(fmt::format("{}: malformed metrics line", path.string()));
    StepMetrics m;
    m.epoch = j.value("epoch", int64_t{0});
    m.step = j.value("step", int64_t{0});
    m.total = j.value("total", 0.0);
    m.l1 = j.value("l1", 0.0);
    m.adv = j.value("adv", 0.0);
    m.perc = j.value("perc", 0.0);
    m.style = j.value("style", 0.0);
    m.critic_loss = j.value("critic_loss", 0.0);
    m.d_real = j.value("d_real", 0.0);
    m.d_fake = j.value("d_fake", 0.0);
    m.gp = j.value("gp", 0.0);
    m.grad_norm_generator = j.value("grad_norm_generator", 0.0);
    m.grad_norm_critic = j.value("grad_norm_critic", 0.0);
    out.push_back(m);
  }
  return out;
}

}  // namespace lbam
