// ffdetect: train, evaluate and analyze the multi-branch forgery detector.
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "ff/checkpoint.hpp"
#include "ff/dataset.hpp"
#include "ff/eval.hpp"
#include "ff/gradcheck.hpp"
#include "ff/image_io.hpp"
#include "ff/model.hpp"
#include "ff/train.hpp"

namespace fs = std::filesystem;
using namespace ff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitCheckpoint = 4;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open file for writing: " + path.string());
  out << text;
  if (!out) throw IoError("short write: " + path.string());
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  int64_t seed = -1;  // -1: keep the config value
};

TrainConfig resolve_train_config(const CommonOpts& opts) {
  TrainConfig cfg = opts.config_path.empty() ? reference_config()
                                             : TrainConfig::from_json(load_json(opts.config_path));
  if (opts.seed >= 0) cfg.seed = static_cast<uint64_t>(opts.seed);
  cfg.validate();
  return cfg;
}

void print_resolved(const nlohmann::json& j) { std::cout << "config: " << j.dump() << "\n"; }

std::vector<ForgerySample> eval_dataset(const TrainConfig& cfg, const std::string& dataset_dir) {
  if (!dataset_dir.empty()) return load_dataset(dataset_dir);
  if (cfg.dataset_kind == "spectral")
    return gen_spectral_dataset(cfg.n_val_per_class, cfg.model.image_size,
                                derive_seed(cfg.seed, 0x7a1));
  return gen_toy_dataset(cfg.n_val_per_class, cfg.model.image_size, derive_seed(cfg.seed, 0x7a1));
}

ImagePlane tensor_to_gray_plane(const Tensor& t, size_t w, size_t h) {
  ImagePlane p(w, h);
  p.values.assign(t.values().begin(), t.values().end());
  return p;
}

// per-token L2 norm of encoded branch tokens as a grid plane, min-max scaled
ImagePlane token_norm_plane(const Tensor& tokens, size_t grid) {
  ImagePlane p(grid, grid);
  for (size_t i = 0; i < grid * grid; ++i) {
    double acc = 0.0;
    for (size_t c = 0; c < kTokenDim; ++c) acc += tokens(i, c) * tokens(i, c);
    p.values[i] = std::sqrt(acc);
  }
  double lo = p.values[0], hi = p.values[0];
  for (double v : p.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-15) {
    std::fill(p.values.begin(), p.values.end(), 0.5);
  } else {
    for (double& v : p.values) v = (v - lo) / (hi - lo);
  }
  return p;
}

int run_gen_data(const CommonOpts& opts, size_t n_per_class, size_t size,
                 const std::string& kind) {
  const uint64_t seed = opts.seed >= 0 ? static_cast<uint64_t>(opts.seed) : 1;
  nlohmann::json echo = {{"subcommand", "gen-data"}, {"n_per_class", n_per_class},
                         {"size", size},            {"kind", kind},
                         {"seed", seed},            {"out", opts.out_dir}};
  print_resolved(echo);
  std::vector<ForgerySample> samples = kind == "spectral"
                                           ? gen_spectral_dataset(n_per_class, size, seed)
                                           : gen_toy_dataset(n_per_class, size, seed);
  save_dataset(samples, opts.out_dir);
  std::cout << "wrote " << samples.size() << " samples to " << opts.out_dir << "\n";
  return kExitOk;
}

int run_train(const CommonOpts& opts) {
  TrainConfig cfg = resolve_train_config(opts);
  print_resolved(cfg.to_json());
  fs::create_directories(opts.out_dir);
  TrainResult result = train_run(cfg, &std::cout);
  const fs::path ckpt = fs::path(opts.out_dir) / "checkpoint.ffck";
  save_checkpoint(result.model, ckpt.string());
  write_text(fs::path(opts.out_dir) / "metrics.csv", metrics_csv(result.history));
  write_text(fs::path(opts.out_dir) / "config.json", cfg.to_json().dump(2) + "\n");
  const EpochStats& last = result.history.back();
  std::cout << "final: acc_train=" << last.acc_train << " acc_val=" << last.acc_val
            << " iou_val=" << last.iou_val << "\n"
            << "checkpoint: " << ckpt.string() << "\n";
  return kExitOk;
}

int run_eval(const CommonOpts& opts, const std::string& checkpoint,
             const std::string& dataset_dir) {
  TrainConfig cfg = resolve_train_config(opts);
  Model model = load_checkpoint(checkpoint);
  nlohmann::json echo = cfg.to_json();
  echo["checkpoint"] = checkpoint;
  echo["dataset_dir"] = dataset_dir;
  print_resolved(echo);
  fs::create_directories(opts.out_dir);
  std::vector<ForgerySample> samples = eval_dataset(cfg, dataset_dir);
  EvalReport r = evaluate_samples(model, samples, cfg.seed);
  const std::string csv = eval_report_csv(r);
  write_text(fs::path(opts.out_dir) / "eval.csv", csv);
  std::cout << csv;
  return kExitOk;
}

int run_sweep(const CommonOpts& opts, const std::string& checkpoint,
              const std::string& dataset_dir) {
  TrainConfig cfg = resolve_train_config(opts);
  Model model = load_checkpoint(checkpoint);
  nlohmann::json echo = cfg.to_json();
  echo["checkpoint"] = checkpoint;
  echo["dataset_dir"] = dataset_dir;
  print_resolved(echo);
  fs::create_directories(opts.out_dir);
  std::vector<ForgerySample> samples = eval_dataset(cfg, dataset_dir);
  auto rows = robustness_sweep(model, samples, cfg.seed);
  const std::string csv = sweep_csv(rows);
  write_text(fs::path(opts.out_dir) / "sweep.csv", csv);
  std::cout << csv;
  return kExitOk;
}

int run_ablate(const CommonOpts& opts) {
  TrainConfig cfg = resolve_train_config(opts);
  print_resolved(cfg.to_json());
  fs::create_directories(opts.out_dir);
  auto rows = ablation_run(cfg, &std::cout);
  const std::string csv = ablation_csv(rows);
  write_text(fs::path(opts.out_dir) / "ablate.csv", csv);
  std::cout << csv;
  return kExitOk;
}

int run_analyze(const CommonOpts& opts, const std::string& image_path,
                const std::string& checkpoint, bool branch_maps, const std::string& seg_map,
                const std::string& depth_map) {
  Model model = load_checkpoint(checkpoint);
  const uint64_t seed = opts.seed >= 0 ? static_cast<uint64_t>(opts.seed) : 1;
  nlohmann::json echo = model.cfg.to_json();
  echo["subcommand"] = "analyze";
  echo["image"] = image_path;
  echo["checkpoint"] = checkpoint;
  echo["seed"] = seed;
  print_resolved(echo);
  fs::create_directories(opts.out_dir);

  ImageRGB original = load_image(image_path);
  const size_t S = model.cfg.image_size;
  ImageRGB resized = (original.width == S && original.height == S)
                         ? original
                         : resize_bilinear(original, S, S);
  Tensor img = image_to_tensor(resized);

  SegmentMap seg_override;
  const SegmentMap* seg_ptr = nullptr;
  if (!seg_map.empty()) {
    std::vector<int> labels = load_label_map(seg_map, S, S);
    int k = 1;
    for (int l : labels) k = std::max(k, l + 1);
    seg_override = {S, S, k, std::move(labels)};
    seg_ptr = &seg_override;
  }
  ImagePlane depth_override;
  const ImagePlane* depth_ptr = nullptr;
  if (!depth_map.empty()) {
    depth_override = load_plane(depth_map);
    if (depth_override.width != S || depth_override.height != S)
      depth_override = resize_bilinear(depth_override, S, S);
    depth_ptr = &depth_override;
  }

  SampleFeatures feats = compute_sample_features(img, model.cfg, seed, seg_ptr, depth_ptr);
  Graph g;
  g.set_recording(false);
  ForwardHooks hooks;
  ModelOutputs out = model_forward(g, model, feats, {}, &hooks);

  const double p_fake = out.y_hat(0, 1);
  size_t best_type = 0;
  for (size_t c = 1; c < kNumClasses; ++c)
    if (out.type_hat[c] > out.type_hat[best_type]) best_type = c;
  char verdict[160];
  std::snprintf(verdict, sizeof(verdict), "verdict=%s p_fake=%.6f type=%s p_type=%.6f",
                p_fake >= 0.5 ? "fake" : "real", p_fake,
                manipulation_name(static_cast<int>(best_type)), out.type_hat[best_type]);
  std::cout << verdict << "\n";

  ImagePlane mask_small = tensor_to_gray_plane(out.mask_hat, S, S);
  ImagePlane mask_full = (original.width == S && original.height == S)
                             ? mask_small
                             : resize_bilinear(mask_small, original.width, original.height);
  save_plane(mask_full, (fs::path(opts.out_dir) / "mask.png").string());
  if (branch_maps) {
    const size_t grid = model.cfg.grid();
    const std::pair<const char*, const Tensor*> maps[3] = {
        {"branch_low.png", &hooks.h_low},
        {"branch_mid.png", &hooks.h_mid},
        {"branch_high.png", &hooks.h_high}};
    for (const auto& [name, tokens] : maps) {
      ImagePlane plane = token_norm_plane(*tokens, grid);
      save_plane(resize_bilinear(plane, original.width, original.height),
                 (fs::path(opts.out_dir) / name).string());
    }
  }
  return kExitOk;
}

int run_extract(const CommonOpts& opts, const std::string& image_path,
                const std::string& feature, size_t size) {
  nlohmann::json echo = {{"subcommand", "extract"},
                         {"image", image_path},
                         {"feature", feature},
                         {"size", size},
                         {"out", opts.out_dir}};
  print_resolved(echo);
  fs::create_directories(opts.out_dir);
  ImageRGB img = load_image(image_path);
  if (img.width != size || img.height != size) img = resize_bilinear(img, size, size);
  Tensor img_t = image_to_tensor(img);
  Graph g;
  g.set_recording(false);
  LowFeatures f = compute_low_features(g, img_t);
  auto dump = [&](const char* name, const Tensor& t) {
    const fs::path path = fs::path(opts.out_dir) / (std::string(name) + ".fftn");
    save_feature_tensor(t, path.string());
    std::cout << "wrote " << path.string() << " " << shape_str(t.shape()) << "\n";
  };
  if (feature == "dct" || feature == "all") dump("dct", f.dct);
  if (feature == "dwt" || feature == "all") dump("dwt", f.dwt);
  if (feature == "srm" || feature == "all") dump("srm", f.srm);
  return kExitOk;
}

int run_gradcheck(uint64_t seed, double tolerance, const std::string& sabotage,
                  const std::string& only) {
  nlohmann::json echo = {{"subcommand", "gradcheck"},
                         {"seed", seed},
                         {"tolerance", tolerance},
                         {"sabotage", sabotage},
                         {"only", only}};
  print_resolved(echo);
  bool all_ok = true;
  auto report = [&](const std::string& name, double err) {
    const bool corrupted = name == sabotage;
    if (corrupted) err = 1.0;  // injected fault for exercising the failure path
    const bool ok = err < tolerance;
    all_ok = all_ok && ok;
    std::printf("op=%s max_rel_err=%.3e tol=%.1e %s\n", name.c_str(), err, tolerance,
                ok ? "ok" : "FAIL");
  };
  bool matched = false;
  for (const PrimitiveCheck& check : gradcheck_registry()) {
    if (!only.empty() && check.name != only) continue;
    matched = true;
    report(check.name, check.run(seed));
  }
  if (only.empty() || only == "model_end_to_end") {
    matched = true;
    report("model_end_to_end", gradcheck_model_end_to_end(seed));
  }
  if (!matched) throw ConfigError("gradcheck: no primitive named '" + only + "'");
  std::cout << (all_ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return all_ok ? kExitOk : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-branch image forgery detection toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  size_t gen_n = 8, gen_size = 64, extract_size = 64;
  std::string gen_kind = "standard";
  std::string checkpoint, dataset_dir, image_path, feature = "all";
  std::string seg_map, depth_map, sabotage;
  bool branch_maps = false;
  uint64_t gc_seed = 7;
  double gc_tol = 1e-5;

  auto add_common = [&](CLI::App* cmd, bool with_config = true) {
    cmd->add_option("--out", opts.out_dir, "output directory (all files land here)");
    cmd->add_option("--seed", opts.seed, "seed override; every random choice flows from it");
    if (with_config) cmd->add_option("--config", opts.config_path, "JSON config file");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a procedural forgery dataset");
  add_common(gen, false);
  gen->add_option("--n-per-class", gen_n, "samples per manipulation class");
  gen->add_option("--size", gen_size, "square image size");
  gen->add_option("--kind", gen_kind, "standard | spectral")
      ->check(CLI::IsMember({"standard", "spectral"}));

  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train_cmd);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--dataset-dir", dataset_dir, "images/ masks/ labels.csv tree");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "robustness sweep over JPEG/blur grid");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  sweep_cmd->add_option("--dataset-dir", dataset_dir, "images/ masks/ labels.csv tree");

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train/evaluate branch-masked variants");
  add_common(ablate_cmd);

  CLI::App* analyze_cmd = app.add_subcommand("analyze", "classify one image and emit heatmaps");
  add_common(analyze_cmd, false);
  analyze_cmd->add_option("--image", image_path, "input image (PNG/PPM/PGM)")->required();
  analyze_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  analyze_cmd->add_flag("--branch-maps", branch_maps, "also write per-branch token-norm maps");
  analyze_cmd->add_option("--seg-map", seg_map, "external segmentation label map (PGM)");
  analyze_cmd->add_option("--depth-map", depth_map, "external depth map (PGM)");

  CLI::App* extract_cmd = app.add_subcommand("extract", "dump raw DCT/DWT/SRM feature tensors");
  add_common(extract_cmd, false);
  extract_cmd->add_option("--image", image_path, "input image")->required();
  extract_cmd->add_option("--feature", feature, "dct | dwt | srm | all")
      ->check(CLI::IsMember({"dct", "dwt", "srm", "all"}));
  extract_cmd->add_option("--size", extract_size, "network input size for extraction");

  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
  gradcheck_cmd->add_option("--seed", gc_seed, "seed for the randomized checks");
  gradcheck_cmd->add_option("--tolerance", gc_tol, "max relative error to accept");
  gradcheck_cmd->add_option("--sabotage", sabotage, "fault injection: force this op to fail")
      ->group("");
  std::string gc_only;
  gradcheck_cmd->add_option("--only", gc_only, "check a single primitive by name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_data(opts, gen_n, gen_size, gen_kind);
    if (train_cmd->parsed()) return run_train(opts);
    if (eval_cmd->parsed()) return run_eval(opts, checkpoint, dataset_dir);
    if (sweep_cmd->parsed()) return run_sweep(opts, checkpoint, dataset_dir);
    if (ablate_cmd->parsed()) return run_ablate(opts);
    if (analyze_cmd->parsed())
      return run_analyze(opts, image_path, checkpoint, branch_maps, seg_map, depth_map);
    if (extract_cmd->parsed()) return run_extract(opts, image_path, feature, extract_size);
    if (gradcheck_cmd->parsed()) return run_gradcheck(gc_seed, gc_tol, sabotage, gc_only);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailure;
  }
  return kExitUsage;
}
