#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "ff/checkpoint.hpp"
#include "ff/dataset.hpp"
#include "ff/image_io.hpp"

using namespace ff;
namespace fs = std::filesystem;

namespace {

std::string tool_path() {
  if (const char* env = std::getenv("FF_TOOL_PATH")) return env;
  for (const char* guess : {"tools/ffdetect", "build/tools/ffdetect", "../tools/ffdetect"})
    if (fs::exists(guess)) return guess;
  return {};
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_tool(const std::string& args) {
  const std::string tool = tool_path();
  REQUIRE_MESSAGE(!tool.empty(), "ffdetect binary not found; set FF_TOOL_PATH");
  const fs::path log = fs::temp_directory_path() / "ff_cli_out.txt";
  const std::string cmd = tool + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(raw);
  std::ifstream in(log);
  r.output.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return r;
}

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / "ff_cli_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cli: gen-data is reproducible byte for byte") {
  fs::path a = scratch("gen_a"), b = scratch("gen_b");
  RunResult ra = run_tool("gen-data --seed 1 --n-per-class 1 --size 32 --out " + a.string());
  REQUIRE(ra.exit_code == 0);
  CHECK(ra.output.find("config:") != std::string::npos);  // resolved config echoed
  RunResult rb = run_tool("gen-data --seed 1 --n-per-class 1 --size 32 --out " + b.string());
  REQUIRE(rb.exit_code == 0);
  size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    CHECK(slurp(entry.path()) == slurp(b / rel));
    ++compared;
  }
  CHECK(compared == 7 * 2 + 2);  // image + mask per sample, two csv indexes
}

TEST_CASE("cli: usage errors exit with code 2") {
  CHECK(run_tool("no-such-command").exit_code == 2);
  CHECK(run_tool("gen-data --frobnicate 3").exit_code == 2);
  CHECK(run_tool("analyze --image x.png").exit_code == 2);  // missing required flag
}

TEST_CASE("cli: config schema violations exit 2 and list the bad fields") {
  fs::path dir = scratch("badcfg");
  const fs::path cfg = dir / "bad.json";
  std::ofstream(cfg) << R"({"lr": -4.0, "batch_size": 0, "epochs": 3})";
  RunResult r = run_tool("train --config " + cfg.string() + " --out " + (dir / "out").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("lr") != std::string::npos);
  CHECK(r.output.find("batch_size") != std::string::npos);
}

TEST_CASE("cli: missing and corrupt checkpoints are classified") {
  fs::path dir = scratch("ckpt");
  auto img_samples = gen_toy_dataset(1, 32, 3);
  save_image(img_samples[0].image, (dir / "img.png").string());
  RunResult missing = run_tool("analyze --image " + (dir / "img.png").string() +
                               " --checkpoint " + (dir / "nope.ffck").string() + " --out " +
                               (dir / "out").string());
  CHECK(missing.exit_code == 3);
  CHECK(missing.output.find("nope.ffck") != std::string::npos);

  std::ofstream(dir / "garbage.ffck") << "XXXXnot a checkpoint";
  RunResult corrupt = run_tool("analyze --image " + (dir / "img.png").string() +
                               " --checkpoint " + (dir / "garbage.ffck").string() + " --out " +
                               (dir / "out").string());
  CHECK(corrupt.exit_code == 4);
}

TEST_CASE("cli: analyze produces a verdict line and a full-size mask") {
  fs::path dir = scratch("analyze");
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.seg_k = 4;
  Model m = Model::init(cfg, 5);
  save_checkpoint(m, (dir / "model.ffck").string());
  auto samples = gen_toy_dataset(1, 48, 9);  // not the model size: exercises resizing
  save_image(samples[2].image, (dir / "img.png").string());
  RunResult r = run_tool("analyze --image " + (dir / "img.png").string() + " --checkpoint " +
                         (dir / "model.ffck").string() + " --branch-maps --out " +
                         (dir / "out").string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("verdict=") != std::string::npos);
  CHECK(r.output.find("p_fake=") != std::string::npos);
  CHECK(r.output.find("type=") != std::string::npos);
  ImagePlane mask = load_plane((dir / "out" / "mask.png").string());
  CHECK(mask.width == 48);
  CHECK(mask.height == 48);
  for (const char* name : {"branch_low.png", "branch_mid.png", "branch_high.png"}) {
    ImagePlane bm = load_plane((dir / "out" / name).string());
    CHECK(bm.width == 48);
  }
}

TEST_CASE("cli: analyze accepts external segmentation and depth maps") {
  fs::path dir = scratch("overrides");
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.seg_k = 4;
  Model m = Model::init(cfg, 6);
  save_checkpoint(m, (dir / "model.ffck").string());
  auto samples = gen_toy_dataset(1, 32, 10);
  save_image(samples[1].image, (dir / "img.png").string());
  // two-region label map and a gradient depth map
  ImagePlane seg(32, 32, 0.0);
  for (size_t y = 16; y < 32; ++y)
    for (size_t x = 0; x < 32; ++x) seg.at(x, y) = 1.0 / 255.0;  // label 1
  save_plane(seg, (dir / "seg.pgm").string());
  ImagePlane depth(32, 32);
  for (size_t y = 0; y < 32; ++y)
    for (size_t x = 0; x < 32; ++x) depth.at(x, y) = static_cast<double>(y) / 31.0;
  save_plane(depth, (dir / "depth.pgm").string());
  RunResult r = run_tool("analyze --image " + (dir / "img.png").string() + " --checkpoint " +
                         (dir / "model.ffck").string() + " --seg-map " +
                         (dir / "seg.pgm").string() + " --depth-map " +
                         (dir / "depth.pgm").string() + " --out " + (dir / "out").string());
  CHECK(r.exit_code == 0);
}

TEST_CASE("cli: extract dumps loadable feature tensors") {
  fs::path dir = scratch("extract");
  auto samples = gen_toy_dataset(1, 32, 12);
  save_image(samples[0].image, (dir / "img.png").string());
  RunResult r = run_tool("extract --image " + (dir / "img.png").string() +
                         " --feature all --size 32 --out " + (dir / "out").string());
  REQUIRE(r.exit_code == 0);
  Tensor dct = load_feature_tensor((dir / "out" / "dct.fftn").string());
  CHECK(dct.shape() == Shape{4, 4, 64});
  Tensor dwt = load_feature_tensor((dir / "out" / "dwt.fftn").string());
  CHECK(dwt.shape() == Shape{16, 16, 3});
  Tensor srm = load_feature_tensor((dir / "out" / "srm.fftn").string());
  CHECK(srm.shape() == Shape{32, 32, 30});
}

TEST_CASE("cli: gradcheck filter, pass and injected failure") {
  RunResult ok = run_tool("gradcheck --only relu");
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("op=relu") != std::string::npos);
  RunResult bad = run_tool("gradcheck --only relu --sabotage relu");
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("op=relu") != std::string::npos);
  CHECK(bad.output.find("FAIL") != std::string::npos);
  CHECK(run_tool("gradcheck --only no_such_op").exit_code == 2);
}

TEST_CASE("cli: nothing is written outside --out") {
  fs::path dir = scratch("containment");
  fs::path cwd = dir / "cwd";
  fs::create_directories(cwd);
  const std::string tool = fs::absolute(tool_path()).string();
  const fs::path log = dir / "log.txt";
  const std::string cmd = "cd " + cwd.string() + " && " + tool +
                          " gen-data --seed 2 --n-per-class 1 --size 32 --out " +
                          (dir / "out").string() + " > " + log.string() + " 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  CHECK(fs::is_empty(cwd));                    // nothing leaked into the cwd
  CHECK(fs::exists(dir / "out" / "labels.csv"));
}
