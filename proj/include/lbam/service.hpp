#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include "lbam/generator.hpp"

namespace lbam {

inline constexpr const char* kVersion = "0.1.0";

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 → ephemeral
  std::filesystem::path checkpoint;
  int64_t max_pixels = 1024 * 1024;
  /// Value of Access-Control-Allow-Origin; empty disables CORS headers.
  std::string allow_origin;
  int max_inflight = 4;
  size_t max_request_bytes = 16u * 1024u * 1024u;
  int threads = 8;
};

struct ServiceResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// HTTP inference endpoint around a read-only generator:
///   GET  /health   → {"status","version","checkpoint_sha256"}
///   POST /inpaint  multipart image, mask[, composite] → image/png
class InpaintService {
 public:
  InpaintService(std::shared_ptr<const LbamUNet> net, std::string checkpoint_hash, ServiceConfig config);
  ~InpaintService();
  InpaintService(const InpaintService&) = delete;
  InpaintService& operator=(const InpaintService&) = delete;

  /// Loads config.checkpoint and hashes it.
  static std::unique_ptr<InpaintService> from_checkpoint(const ServiceConfig& config);

  ServiceResponse health() const;
  /// Request logic without the transport; composite is the raw form value ("" when absent).
  ServiceResponse inpaint(const std::string& image_bytes, const std::string& mask_bytes,
                          const std::string& composite) const;

  /// Binds the socket and returns the port.
  int bind();
  /// Blocks serving requests until stop().
  void run();
  /// bind() + run() on a background thread; returns the port once ready.
  int start();
  void stop();

  const ServiceConfig& config() const { return config_; }
  const std::string& checkpoint_hash() const { return hash_; }

 private:
  struct Impl;
  std::shared_ptr<const LbamUNet> net_;
  std::string hash_;
  ServiceConfig config_;
  mutable std::atomic<int> inflight_{0};
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace lbam
