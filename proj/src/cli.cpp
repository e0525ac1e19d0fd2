#include "lbam/cli.hpp"

#include <CLI11.hpp>
#include <csignal>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lbam/autograd.hpp"
#include "lbam/checkpoint.hpp"
#include "lbam/data.hpp"
#include "lbam/error.hpp"
#include "lbam/evaluation.hpp"
#include "lbam/masks.hpp"
#include "lbam/ops.hpp"
#include "lbam/random.hpp"
#include "lbam/service.hpp"
#include "lbam/training.hpp"

namespace lbam {

namespace {

struct TrainArgs {
  std::string config;
  std::string manifest;
  std::string data_dir;
  std::string out = "runs/train";
  std::string resume;
  std::vector<std::string> sets;
  bool verbose = false;
};

struct EvalArgs {
  std::string checkpoint;
  bool identity = false;
  std::string manifest;
  std::string data_dir;
  std::string mask_dir;
  int64_t masks_per_bucket = 2;
  int64_t image_size = 256;
  int64_t min_side = 350;
  bool composite = false;
  uint64_t seed = 0;
  std::string jsonl;
};

struct InferArgs {
  std::string checkpoint;
  std::string image;
  std::string mask;
  std::string out;
  bool composite = false;
};

struct GenMaskArgs {
  std::string bucket;
  int64_t count = 1;
  uint64_t seed = 0;
  int64_t size = 256;
  std::string out = "masks";
};

struct VisualizeArgs {
  std::string checkpoint;
  std::string attention = "unlearned";
  std::string image;
  std::string mask;
  std::string out = "heatmaps";
  int64_t size = 256;
  uint64_t seed = 0;
};

DatasetManifest resolve_manifest(const std::string& manifest, const std::string& dir, uint64_t seed,
                                 const std::string& split) {
  if (!manifest.empty()) return DatasetManifest::from_file(manifest, split, seed);
  if (!dir.empty()) return DatasetManifest::from_directory(dir, split, seed);
  throw ConfigError("either --manifest or --data-dir is required");
}

Tensor batch1(const Tensor& t) {
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return ops::reshape(t.clone(), s);
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const TrainConfig config = load_train_config(a.config, a.sets);
  const DatasetManifest manifest = resolve_manifest(a.manifest, a.data_dir, config.seed, "train");
  TrainOptions options;
  options.out_dir = a.out;
  options.resume = a.resume;
  options.quiet = !a.verbose;
  const CheckpointRecord r = train(manifest, config, options);
  out << fmt::format("trained to epoch {} (step {}); checkpoints in {}\n", r.epoch, r.step, a.out);
  return 0;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.identity == !a.checkpoint.empty()) throw ConfigError("pass exactly one of --checkpoint or --identity-model");
  const DatasetManifest manifest = resolve_manifest(a.manifest, a.data_dir, a.seed, "test");
  std::vector<Tensor> masks;
  if (!a.mask_dir.empty()) {
    for (const auto& p : list_masks(a.mask_dir)) masks.push_back(load_mask(p));
  } else {
    MaskOptions mo;
    mo.size = a.image_size;
    for (const RatioBucket& b : canonical_buckets()) {
      for (int64_t i = 0; i < a.masks_per_bucket; ++i) {
        masks.push_back(generate_irregular_mask(
            b, derive_seed(a.seed, {static_cast<uint64_t>(b.upper * 10), static_cast<uint64_t>(i)}), mo));
      }
    }
  }
  EvalOptions eo;
  eo.image_size = a.image_size;
  eo.min_side = a.min_side;
  eo.seed = a.seed;
  eo.composite = a.composite;
  std::optional<LbamUNet> net;
  Predictor predictor;
  if (a.identity) {
    predictor = identity_predictor();
    eo.model_name = "identity";
  } else {
    net = generator_from_checkpoint(load_checkpoint(a.checkpoint));
    predictor = network_predictor(*net);
    eo.model_name = "LBAM";
  }
  const EvalReport report = evaluate_buckets(predictor, manifest, masks, eo);
  out << report.table();
  if (!a.jsonl.empty()) {
    std::ofstream f(a.jsonl);
    for (const auto& r : report.records()) f << r.dump() << '\n';
    if (!f) throw IoError(fmt::format("cannot write {}", a.jsonl));
  }
  return 0;
}

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const LbamUNet net = generator_from_checkpoint(load_checkpoint(a.checkpoint));
  const Tensor image = batch1(load_image(a.image));
  const Tensor mask = batch1(load_mask(a.mask));
  if (mask.size(2) != image.size(2) || mask.size(3) != image.size(3)) {
    throw ShapeError(fmt::format("mask {} is {}x{} but image is {}x{}", a.mask, mask.size(3), mask.size(2),
                                 image.size(3), image.size(2)));
  }
  const Tensor m3 = mask_to_rgb(mask);
  const Tensor result = composite_output(net.infer(image * m3, mask), image, m3, a.composite);
  save_image(result, a.out);
  out << fmt::format("wrote {}\n", a.out);
  return 0;
}

InpaintService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const ServiceConfig& config, std::ostream& out) {
  auto service = InpaintService::from_checkpoint(config);
  const int port = service->bind();
  out << fmt::format("serving on http://{}:{} (checkpoint sha256 {})\n", config.host, port,
                     service->checkpoint_hash())
      << std::flush;
  g_service = service.get();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  service->run();
  g_service = nullptr;
  return 0;
}

int cmd_genmasks(const GenMaskArgs& a, std::ostream& out) {
  const RatioBucket bucket = parse_bucket(a.bucket);
  if (a.count < 1) throw ConfigError("--count must be at least 1");
  MaskOptions mo;
  mo.size = a.size;
  for (int64_t i = 0; i < a.count; ++i) {
    const Tensor mask = generate_irregular_mask(bucket, derive_seed(a.seed, {static_cast<uint64_t>(i)}), mo);
    const auto path = std::filesystem::path(a.out) / fmt::format("mask_{:g}-{:g}_{:04}.png", bucket.lower,
                                                                 bucket.upper, i);
    save_mask(mask, path);
    out << fmt::format("{} ratio {:.4f}\n", path.string(), compute_mask_ratio(mask));
  }
  return 0;
}

int cmd_visualize(const VisualizeArgs& a, std::ostream& out) {
  LbamUNet net = a.checkpoint.empty()
                     ? LbamUNet::build(a.seed, GeneratorConfig{parse_attention_kind(a.attention)})
                     : generator_from_checkpoint(load_checkpoint(a.checkpoint));
  Tensor image;
  if (!a.image.empty()) {
    image = batch1(load_image(a.image));
  } else {
    Rng rng(a.seed);
    image = rand_uniform({1, 3, a.size, a.size}, rng, -1.0, 1.0);
  }
  const int64_t h = image.size(2);
  const int64_t w = image.size(3);
  Tensor mask;
  if (!a.mask.empty()) {
    mask = batch1(load_mask(a.mask));
  } else {
    mask = Tensor::ones({1, 1, h, w});
    float* m = mask.mutable_data();
    for (int64_t y = h / 4; y < 3 * h / 4; ++y) {
      for (int64_t x = w / 4; x < 3 * w / 4; ++x) m[y * w + x] = 0.0f;
    }
  }
  ForwardState state;
  {
    NoGradGuard no_grad;
    net.forward_with_intermediates(image * mask_to_rgb(mask), mask, state, false);
  }
  for (const auto& p : render_heatmaps(state, a.out)) out << p.string() << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"LBAM image inpainting: training, evaluation, inference and serving", "lbam"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train generator and critic");
  train_cmd->add_option("--config", ta.config, "JSON training config")->check(CLI::ExistingFile)->envname("LBAM_CONFIG");
  train_cmd->add_option("--manifest", ta.manifest, "Line-delimited image list")->envname("LBAM_MANIFEST");
  train_cmd->add_option("--data-dir", ta.data_dir, "Directory of training images")->envname("LBAM_DATA_DIR");
  train_cmd->add_option("--out", ta.out, "Output directory for checkpoints and metrics")->capture_default_str();
  train_cmd->add_option("--resume", ta.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train_cmd->add_option("--set", ta.sets, "Config override key=value (repeatable, dotted keys)");
  train_cmd->add_flag("--verbose", ta.verbose, "Print one line per step");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Per-bucket PSNR / SSIM / mean l1 report");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Generator checkpoint")->envname("LBAM_CHECKPOINT");
  eval_cmd->add_flag("--identity-model", ea.identity, "Evaluate the oracle that returns the ground truth");
  eval_cmd->add_option("--manifest", ea.manifest, "Line-delimited image list");
  eval_cmd->add_option("--data-dir", ea.data_dir, "Directory of test images");
  eval_cmd->add_option("--mask-dir", ea.mask_dir, "Directory of mask PNGs (default: synthesize)");
  eval_cmd->add_option("--masks-per-bucket", ea.masks_per_bucket, "Synthesized masks per bucket")->capture_default_str();
  eval_cmd->add_option("--image-size", ea.image_size, "Crop size")->capture_default_str();
  eval_cmd->add_option("--min-side", ea.min_side, "Resize short side before cropping")->capture_default_str();
  eval_cmd->add_flag("--composite", ea.composite, "Also report metrics on composited outputs");
  eval_cmd->add_option("--seed", ea.seed, "Seed for crops and masks")->capture_default_str();
  eval_cmd->add_option("--jsonl", ea.jsonl, "Write line-delimited records here");

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "Inpaint one image");
  infer_cmd->add_option("--checkpoint", ia.checkpoint, "Generator checkpoint")->required()->envname("LBAM_CHECKPOINT");
  infer_cmd->add_option("--image", ia.image, "Input image (sides multiple of 128)")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--mask", ia.mask, "Mask PNG, 255 = known")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--out", ia.out, "Output image path")->required();
  infer_cmd->add_flag("--composite", ia.composite, "Keep known pixels from the input");

  ServiceConfig sc;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP inference service");
  serve_cmd->add_option("--checkpoint", sc.checkpoint, "Generator checkpoint")->required()->envname("LBAM_CHECKPOINT");
  serve_cmd->add_option("--host", sc.host, "Bind address")->capture_default_str()->envname("LBAM_HOST");
  serve_cmd->add_option("--port", sc.port, "TCP port (0 = any)")->capture_default_str()->envname("LBAM_PORT");
  serve_cmd->add_option("--max-pixels", sc.max_pixels, "Largest accepted image area")
      ->capture_default_str()->envname("LBAM_MAX_PIXELS");
  serve_cmd->add_option("--allow-origin", sc.allow_origin, "CORS origin for the web client")
      ->envname("LBAM_ALLOW_ORIGIN");
  serve_cmd->add_option("--max-inflight", sc.max_inflight, "Concurrent inpaint requests before 503")
      ->capture_default_str()->envname("LBAM_MAX_INFLIGHT");
  serve_cmd->add_option("--threads", sc.threads, "Worker threads")->capture_default_str()->envname("LBAM_THREADS");

  GenMaskArgs ga;
  auto* gen_cmd = app.add_subcommand("genmasks", "Synthesize irregular masks for a ratio bucket");
  gen_cmd->add_option("--bucket", ga.bucket, "Hole ratio bucket, e.g. 0.1-0.2")->required();
  gen_cmd->add_option("--count", ga.count, "Number of masks")->capture_default_str();
  gen_cmd->add_option("--seed", ga.seed, "Base seed")->capture_default_str();
  gen_cmd->add_option("--size", ga.size, "Mask side length")->capture_default_str();
  gen_cmd->add_option("--out", ga.out, "Output directory")->capture_default_str();

  VisualizeArgs va;
  auto* vis_cmd = app.add_subcommand("visualize", "Render attention and feature heat-maps");
  vis_cmd->add_option("--checkpoint", va.checkpoint, "Generator checkpoint (default: freshly built net)");
  vis_cmd->add_option("--attention", va.attention, "learned or unlearned, for a freshly built net")
      ->capture_default_str()->check(CLI::IsMember({"learned", "unlearned"}));
  vis_cmd->add_option("--image", va.image, "Input image (default: random)");
  vis_cmd->add_option("--mask", va.mask, "Mask PNG (default: centered square hole)");
  vis_cmd->add_option("--out", va.out, "Output directory")->capture_default_str();
  vis_cmd->add_option("--size", va.size, "Side of the random image")->capture_default_str();
  vis_cmd->add_option("--seed", va.seed, "Seed")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    if (*train_cmd) return cmd_train(ta, out);
    if (*eval_cmd) return cmd_eval(ea, out);
    if (*infer_cmd) return cmd_infer(ia, out);
    if (*serve_cmd) return cmd_serve(sc, out);
    if (*gen_cmd) return cmd_genmasks(ga, out);
    if (*vis_cmd) return cmd_visualize(va, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace lbam
