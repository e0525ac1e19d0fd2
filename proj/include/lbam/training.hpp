#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lbam/checkpoint.hpp"
#include "lbam/critic.hpp"
#include "lbam/data.hpp"
#include "lbam/generator.hpp"
#include "lbam/losses.hpp"
#include "lbam/nn.hpp"

namespace lbam {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int64_t batch_size = 4;
  int64_t epochs = 20;
  LossWeights weights;
  int64_t critic_steps = 1;
  uint64_t seed = 0;
  int64_t checkpoint_every = 1;  // epochs
  double clip_norm = 1.0;
  int64_t image_size = 256;
  int64_t min_side = 350;
  bool augment = true;
  /// Same crop and mask for an image in every epoch.
  bool fixed_samples = false;
  bool shuffle = true;
  std::string mask_dir;     // empty → synthesized masks
  std::string vgg_weights;  // empty → random trunk (warned)
  std::string critic_head = "identity";
  GeneratorConfig generator;
  int64_t max_steps = 0;  // 0 = no limit
};

nlohmann::json to_json(const TrainConfig& config);
/// Unknown keys and ill-typed values raise ConfigError; missing keys keep defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
/// Applies "dotted.key=value"; the value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);
/// Optional JSON file plus overrides, validated.
TrainConfig load_train_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
void validate(const TrainConfig& config);

struct Batch {
  Tensor images;  // N×3×S×S
  Tensor masks;   // N×1×S×S, 1 = known
  std::vector<size_t> indices;
};

/// Deterministic sample for image `index` in `epoch` (epoch is ignored with fixed_samples).
Batch make_batch(const DatasetManifest& manifest, const TrainConfig& config, int64_t epoch,
                 const std::vector<size_t>& indices);
/// Image order for an epoch; drop_last batching leaves size/batch full batches.
std::vector<size_t> epoch_order(size_t count, const TrainConfig& config, int64_t epoch);

struct StepMetrics {
  int64_t epoch = 0;
  int64_t step = 0;
  double total = 0.0;
  double l1 = 0.0;
  double adv = 0.0;
  double perc = 0.0;
  double style = 0.0;
  double critic_loss = 0.0;
  double d_real = 0.0;
  double d_fake = 0.0;
  double gp = 0.0;
  double grad_norm_generator = 0.0;
  double grad_norm_critic = 0.0;

  nlohmann::json to_json() const;
};

/// Generator forward shared by both half-steps of one iteration.
struct StepContext {
  Tensor gt;
  Tensor mask;
  Tensor output;
};

/// Owns the networks and optimizers of one training run.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  StepContext prepare(const Batch& batch);
  /// critic_steps critic updates against the detached output.
  void critic_update(const StepContext& ctx, StepMetrics& metrics);
  void generator_update(const StepContext& ctx, StepMetrics& metrics);
  /// prepare + critic_update (when the adversarial weight is positive) + generator_update.
  StepMetrics step(const Batch& batch);

  CheckpointRecord checkpoint(int64_t epoch) const;
  void restore(const CheckpointRecord& record);

  const LbamUNet& generator() const { return generator_; }
  const TwoColumnCritic& critic() const { return critic_; }
  const TrainConfig& config() const { return config_; }
  int64_t steps_done() const { return step_; }
  bool trains_critic() const { return config_.weights.adv > 0.0; }

 private:
  TrainConfig config_;
  LbamUNet generator_;
  TwoColumnCritic critic_;
  std::optional<FeatureExtractor> extractor_;
  nn::Adam gen_opt_;
  nn::Adam critic_opt_;
  int64_t step_ = 0;
  int64_t epoch_ = 0;
};

struct TrainOptions {
  std::filesystem::path out_dir = "runs/train";
  /// Checkpoint to continue from.
  std::filesystem::path resume;
  /// Stop after this many epochs of the current invocation (0 = run to config.epochs).
  int64_t stop_after_epochs = 0;
  std::function<void(const StepMetrics&)> on_step;
  bool quiet = true;
};

/// Runs the remaining epochs, writing <out_dir>/metrics.jsonl, per-epoch checkpoints
/// and <out_dir>/checkpoint_latest.lbam. Returns the final record.
CheckpointRecord train(const DatasetManifest& manifest, const TrainConfig& config, const TrainOptions& options = {});

/// Reads a metrics log back.
std::vector<StepMetrics> read_metrics(const std::filesystem::path& path);

}  // namespace lbam
