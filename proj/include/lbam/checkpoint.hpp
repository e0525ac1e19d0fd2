#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lbam/critic.hpp"
#include "lbam/generator.hpp"
#include "lbam/tensor.hpp"

namespace lbam {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointRecord {
  int format_version = kCheckpointVersion;
  /// Configuration snapshot. "generator" holds the GeneratorConfig; training
  /// runs store their full TrainConfig alongside.
  nlohmann::json config = nlohmann::json::object();
  int64_t epoch = 0;
  int64_t step = 0;
  std::vector<NamedTensor> generator;            // parameters + BN buffers
  std::vector<NamedTensor> critic;               // may be empty
  std::vector<NamedTensor> generator_optimizer;  // Adam state, may be empty
  std::vector<NamedTensor> critic_optimizer;
};

void save_checkpoint(const CheckpointRecord& record, const std::filesystem::path& path);
/// CorruptFileError on damage, VersionError on a newer format.
CheckpointRecord load_checkpoint(const std::filesystem::path& path);

/// Deep copies so later training does not alias the record.
std::vector<NamedTensor> snapshot(const std::vector<NamedTensor>& tensors);
/// Copies same-named entries of `source` into every target.
void restore_named(const std::vector<NamedTensor>& source, const std::vector<NamedTensor>& targets);

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(const std::string& name);
nlohmann::json to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

/// Rebuilds the generator described by record.config["generator"] and loads its weights.
LbamUNet generator_from_checkpoint(const CheckpointRecord& record);

/// SHA-256 of the file contents, lowercase hex.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace lbam
