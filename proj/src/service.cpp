#include "lbam/service.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "lbam/checkpoint.hpp"
#include "lbam/data.hpp"
#include "lbam/error.hpp"
#include "lbam/masks.hpp"
#include "lbam/ops.hpp"

namespace lbam {

namespace {

ServiceResponse error_response(int status, const std::string& reason) {
  return {status, "application/json", nlohmann::json{{"error", reason}}.dump()};
}

std::optional<bool> parse_flag(const std::string& v) {
  if (v.empty() || v == "false" || v == "0" || v == "off" || v == "no") return false;
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  return std::nullopt;
}

std::vector<unsigned char> as_bytes(const std::string& s) { return {s.begin(), s.end()}; }

// Spatial size of an encoded image without a full decode.
std::pair<int64_t, int64_t> peek_size(const std::string& bytes) {
  const Tensor t = decode_image(as_bytes(bytes));
  return {t.size(1), t.size(2)};
}

class InflightGuard {
 public:
  InflightGuard(std::atomic<int>& counter, int limit) : counter_(counter) {
    admitted_ = counter_.fetch_add(1) < limit;
  }
  ~InflightGuard() { counter_.fetch_sub(1); }
  bool admitted() const { return admitted_; }

 private:
  std::atomic<int>& counter_;
  bool admitted_ = false;
};

}  // namespace

struct InpaintService::Impl {
  httplib::Server server;
};

InpaintService::InpaintService(std::shared_ptr<const LbamUNet> net, std::string checkpoint_hash, ServiceConfig config)
    : net_(std::move(net)), hash_(std::move(checkpoint_hash)), config_(std::move(config)),
      impl_(std::make_unique<Impl>()) {
  if (!net_) throw ConfigError("service needs a generator");
  if (config_.max_pixels <= 0) throw ConfigError("max_pixels must be positive");
  if (config_.max_inflight <= 0) throw ConfigError("max_inflight must be positive");
  httplib::Server& s = impl_->server;
  const int threads = std::max(1, config_.threads);
  s.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<size_t>(threads)); };
  s.set_payload_max_length(config_.max_request_bytes);

  auto send = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  s.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  s.Post("/inpaint", [this, send](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) {
      send(res, error_response(400, "expected multipart/form-data with fields image and mask"));
      return;
    }
    if (!req.has_file("image") || !req.has_file("mask")) {
      send(res, error_response(400, "missing form field: image and mask are required"));
      return;
    }
    const std::string composite = req.has_file("composite") ? req.get_file_value("composite").content : "";
    send(res, inpaint(req.get_file_value("image").content, req.get_file_value("mask").content, composite));
  });
  if (!config_.allow_origin.empty()) {
    const std::string origin = config_.allow_origin;
    s.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    s.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
  }
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
    res.status = 500;
    res.set_content(nlohmann::json{{"error", "internal error"}}.dump(), "application/json");
  });
}

InpaintService::~InpaintService() { stop(); }

std::unique_ptr<InpaintService> InpaintService::from_checkpoint(const ServiceConfig& config) {
  if (config.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const CheckpointRecord record = load_checkpoint(config.checkpoint);
  auto net = std::make_shared<const LbamUNet>(generator_from_checkpoint(record));
  return std::make_unique<InpaintService>(std::move(net), file_sha256(config.checkpoint), config);
}

ServiceResponse InpaintService::health() const {
  return {200, "application/json",
          nlohmann::json{{"status", "ok"}, {"version", kVersion}, {"checkpoint_sha256", hash_}}.dump()};
}

ServiceResponse InpaintService::inpaint(const std::string& image_bytes, const std::string& mask_bytes,
                                        const std::string& composite) const {
  InflightGuard guard(inflight_, config_.max_inflight);
  if (!guard.admitted()) return error_response(503, "server busy, retry later");
  const std::optional<bool> blend = parse_flag(composite);
  if (!blend) return error_response(400, fmt::format("composite must be true or false, got '{}'", composite));
  try {
    if (image_bytes.empty()) return error_response(400, "image field is empty");
    if (mask_bytes.empty()) return error_response(400, "mask field is empty");
    const auto [h, w] = peek_size(image_bytes);
    if (h * w > config_.max_pixels) {
      return error_response(413, fmt::format("image has {}x{} = {} pixels, limit is {}", w, h, h * w,
                                             config_.max_pixels));
    }
    const Tensor image = decode_image(as_bytes(image_bytes));
    const Tensor mask = decode_mask(as_bytes(mask_bytes));
    if (mask.size(1) != h || mask.size(2) != w) {
      return error_response(400, fmt::format("mask is {}x{} but image is {}x{}", mask.size(2), mask.size(1), w, h));
    }
    if (h % kSizeMultiple != 0 || w % kSizeMultiple != 0) {
      return error_response(400, fmt::format("image size {}x{} must be a multiple of {} on both sides", w, h,
                                             kSizeMultiple));
    }
    const Tensor img4 = ops::reshape(image.clone(), {1, 3, h, w});
    const Tensor m4 = ops::reshape(mask.clone(), {1, 1, h, w});
    const Tensor m3 = mask_to_rgb(m4);
    Tensor out = net_->infer(img4 * m3, m4);
    out = composite_output(out, img4, m3, *blend);
    const std::vector<unsigned char> png = encode_png(out);
    return {200, "image/png", std::string(png.begin(), png.end())};
  } catch (const IoError& e) {
    return error_response(400, e.what());
  } catch (const ShapeError& e) {
    return error_response(400, e.what());
  } catch (const NumericError& e) {
    return error_response(400, e.what());
  }
}

int InpaintService::bind() {
  int port = config_.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(config_.host);
    if (port < 0) throw IoError(fmt::format("cannot bind {}", config_.host));
  } else if (!impl_->server.bind_to_port(config_.host, port)) {
    throw IoError(fmt::format("cannot bind {}:{}", config_.host, port));
  }
  config_.port = port;
  return port;
}

void InpaintService::run() { impl_->server.listen_after_bind(); }

int InpaintService::start() {
  const int port = bind();
  thread_ = std::thread([this] { run(); });
  impl_->server.wait_until_ready();
  return port;
}

void InpaintService::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace lbam
