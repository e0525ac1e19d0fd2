#include "lbam/checkpoint.hpp"

#include <array>
#include <fmt/format.h>
#include <fstream>
#include <openssl/evp.h>

#include "lbam/archive.hpp"
#include "lbam/error.hpp"

namespace lbam {

namespace {

constexpr std::array<std::pair<const char*, std::vector<NamedTensor> CheckpointRecord::*>, 4> kGroups{{
    {"generator", &CheckpointRecord::generator},
    {"critic", &CheckpointRecord::critic},
    {"optim.generator", &CheckpointRecord::generator_optimizer},
    {"optim.critic", &CheckpointRecord::critic_optimizer},
}};

}  // namespace

void save_checkpoint(const CheckpointRecord& record, const std::filesystem::path& path) {
  Archive archive;
  archive.metadata["checkpoint_version"] = record.format_version;
  archive.metadata["epoch"] = record.epoch;
  archive.metadata["step"] = record.step;
  archive.metadata["config"] = record.config;
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& [group, member] : kGroups) {
    const std::vector<NamedTensor>& tensors = record.*member;
    groups[group] = static_cast<int64_t>(tensors.size());
    for (const NamedTensor& t : tensors) archive.tensors.push_back({std::string(group) + "/" + t.name, t.tensor});
  }
  archive.metadata["groups"] = groups;
  save_archive(path, archive);
}

CheckpointRecord load_checkpoint(const std::filesystem::path& path) {
  Archive archive = load_archive(path);
  const nlohmann::json& meta = archive.metadata;
  if (!meta.contains("checkpoint_version")) {
    throw CorruptFileError(fmt::format("{}: not a checkpoint (no checkpoint_version)", path.string()));
  }
  CheckpointRecord record;
  try {
    record.format_version = meta.at("checkpoint_version").get<int>();
    if (record.format_version > kCheckpointVersion || record.format_version < 1) {
      throw VersionError(fmt::format("{}: checkpoint version {} is not supported (this build reads version {})",
                                     path.string(), record.format_version, kCheckpointVersion),
                         record.format_version, kCheckpointVersion);
    }
    record.epoch = meta.at("epoch").get<int64_t>();
    record.step = meta.at("step").get<int64_t>();
    record.config = meta.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(fmt::format("{}: malformed checkpoint metadata: {}", path.string(), e.what()));
  }
  for (NamedTensor& t : archive.tensors) {
    const auto slash = t.name.find('/');
    bool placed = false;
    if (slash != std::string::npos) {
      const std::string group = t.name.substr(0, slash);
      for (const auto& [g, member] : kGroups) {
        if (group == g) {
          (record.*member).push_back({t.name.substr(slash + 1), t.tensor});
          placed = true;
          break;
        }
      }
    }
    if (!placed) throw CorruptFileError(fmt::format("{}: unexpected entry '{}'", path.string(), t.name));
  }
  return record;
}

std::vector<NamedTensor> snapshot(const std::vector<NamedTensor>& tensors) {
  std::vector<NamedTensor> out;
  out.reserve(tensors.size());
  for (const NamedTensor& t : tensors) out.push_back({t.name, t.tensor.clone()});
  return out;
}

void restore_named(const std::vector<NamedTensor>& source, const std::vector<NamedTensor>& targets) {
  Archive view;
  view.tensors = source;
  restore_tensors(view, targets);
}

std::string to_string(AttentionKind kind) { return kind == AttentionKind::learned ? "learned" : "unlearned"; }

AttentionKind parse_attention_kind(const std::string& name) {
  if (name == "learned") return AttentionKind::learned;
  if (name == "unlearned") return AttentionKind::unlearned;
  throw ConfigError(fmt::format("unknown attention kind '{}' (expected learned or unlearned)", name));
}

nlohmann::json to_json(const GeneratorConfig& config) {
  return {{"attention", to_string(config.attention)},
          {"reverse_attention", config.reverse_attention},
          {"alpha", config.alpha},
          {"init_std", config.init_std}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig cfg;
  if (!j.is_object()) return cfg;
  try {
    if (j.contains("attention")) cfg.attention = parse_attention_kind(j.at("attention").get<std::string>());
    if (j.contains("reverse_attention")) cfg.reverse_attention = j.at("reverse_attention").get<bool>();
    if (j.contains("alpha")) cfg.alpha = j.at("alpha").get<double>();
    if (j.contains("init_std")) cfg.init_std = j.at("init_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("invalid generator config: {}", e.what()));
  }
  return cfg;
}

LbamUNet generator_from_checkpoint(const CheckpointRecord& record) {
  const nlohmann::json gen = record.config.contains("generator") ? record.config.at("generator") : nlohmann::json{};
  LbamUNet net = LbamUNet::build(0, generator_config_from_json(gen));
  restore_named(record.generator, net.state());
  return net;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

}  // namespace lbam
