// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <vector>

#include "ff/checkpoint.hpp"
#include "ff/dataset.hpp"
#include "ff/eval.hpp"
#include "ff/gradcheck.hpp"
#include "ff/image_io.hpp"
#include "ff/jpeg_sim.hpp"
#include "ff/train.hpp"

using namespace ff;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, name,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// --------------------------------------------------------------------------
// 1. oracle equivalence: block DCT / conv2d / matmul vs brute-force loops
// --------------------------------------------------------------------------
void criterion_1() {
  auto t0 = Clock::now();
  Rng rng(1001);
  double worst_dct = 0.0;
  const double pi = 3.14159265358979323846;
  ImagePlane block(8, 8);
  for (int trial = 0; trial < 1000; ++trial) {
    for (auto& v : block.values) v = rng.uniform();
    DctBlockGrid grid = block_dct(block);
    for (int u = 0; u < 8; ++u)
      for (int v = 0; v < 8; ++v) {
        double acc = 0.0;
        for (int x = 0; x < 8; ++x)
          for (int y = 0; y < 8; ++y)
            acc += block.at(static_cast<size_t>(y), static_cast<size_t>(x)) *
                   std::cos(pi * u * (2.0 * x + 1.0) / 16.0) *
                   std::cos(pi * v * (2.0 * y + 1.0) / 16.0);
        worst_dct = std::max(worst_dct, std::fabs(grid.block(0, 0)[u * 8 + v] - acc));
      }
  }

  double worst_mm = 0.0;
  Graph g;
  g.set_recording(false);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor a({4, 6}), b({6, 5});
    for (size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-2, 2);
    for (size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-2, 2);
    Tensor c = ops::matmul(g, a, b);
    for (size_t i = 0; i < 4; ++i)
      for (size_t j = 0; j < 5; ++j) {
        double acc = 0.0;
        for (size_t p = 0; p < 6; ++p) acc += a(i, p) * b(p, j);
        worst_mm = std::max(worst_mm, std::fabs(c(i, j) - acc));
      }
  }

  double worst_conv = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x({6, 7, 2}), k({3, 3, 2, 2});
    for (size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
    for (size_t i = 0; i < k.size(); ++i) k[i] = rng.uniform(-1, 1);
    Tensor y = ops::conv2d(g, x, k, ops::Pad::Same);
    for (size_t oy = 0; oy < 6; ++oy)
      for (size_t ox = 0; ox < 7; ++ox)
        for (size_t co = 0; co < 2; ++co) {
          double acc = 0.0;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
              for (size_t ci = 0; ci < 2; ++ci) {
                const long iy = static_cast<long>(oy) + ky - 1;
                const long ix = static_cast<long>(ox) + kx - 1;
                if (iy < 0 || iy >= 6 || ix < 0 || ix >= 7) continue;
                acc += x(static_cast<size_t>(iy), static_cast<size_t>(ix), ci) *
                       k[((static_cast<size_t>(ky) * 3 + static_cast<size_t>(kx)) * 2 + ci) * 2 +
                         co];
              }
          worst_conv = std::max(worst_conv, std::fabs(y(oy, ox, co) - acc));
        }
  }
  const double elapsed = seconds_since(t0);
  report(1, "oracle equivalence (DCT/conv/matmul)",
         worst_dct < 1e-10 && worst_mm < 1e-12 && worst_conv < 1e-12 && elapsed < 10.0,
         fmt("dct %.2e<1e-10, matmul %.2e<1e-12, conv %.2e<1e-12, %.1fs<10s", worst_dct,
             worst_mm, worst_conv, elapsed));
}

// --------------------------------------------------------------------------
// 2. wavelet identities
// --------------------------------------------------------------------------
void criterion_2() {
  ImagePlane c(32, 24, 0.6180339887);
  HaarSubbands sc = haar_dwt(c);
  double worst_const = 0.0;
  for (double v : sc.lh.values) worst_const = std::max(worst_const, std::fabs(v));
  for (double v : sc.hl.values) worst_const = std::max(worst_const, std::fabs(v));
  for (double v : sc.hh.values) worst_const = std::max(worst_const, std::fabs(v));

  Rng rng(2002);
  double worst_rec = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    ImagePlane p(16, 16);
    for (auto& v : p.values) v = rng.uniform();
    ImagePlane rec = haar_reconstruct(haar_dwt(p));
    for (size_t i = 0; i < p.values.size(); ++i)
      worst_rec = std::max(worst_rec, std::fabs(rec.values[i] - p.values[i]));
  }
  report(2, "wavelet identities", worst_const == 0.0 && worst_rec < 1e-12,
         fmt("constant subbands max %.1e, reconstruction err %.2e<1e-12", worst_const,
             worst_rec));
}

// --------------------------------------------------------------------------
// 3. gradient suite: every primitive plus the 64-token full model
// --------------------------------------------------------------------------
void criterion_3() {
  auto t0 = Clock::now();
  auto registry = gradcheck_registry();
  std::vector<double> errs(registry.size(), 0.0);
  parallel_for(registry.size(), [&](size_t i) { errs[i] = registry[i].run(33); });
  double worst_prim = 0.0;
  std::string worst_name = "-";
  for (size_t i = 0; i < registry.size(); ++i)
    if (errs[i] > worst_prim) {
      worst_prim = errs[i];
      worst_name = registry[i].name;
    }
  const double e2e = gradcheck_model_end_to_end(33);
  const double elapsed = seconds_since(t0);
  report(3, "gradient suite (primitives + full model)",
         worst_prim < 1e-5 && e2e < 1e-5 && elapsed < 60.0,
         fmt("%zu primitives worst %.2e (%s), end-to-end %.2e<1e-5, %.1fs<60s", registry.size(),
             worst_prim, worst_name.c_str(), e2e, elapsed));
}

// --------------------------------------------------------------------------
// 4. attention contracts
// --------------------------------------------------------------------------
void criterion_4() {
  Rng rng(44);
  Graph g;
  g.set_recording(false);
  double worst_rowsum = 0.0;
  // encoder attention probes
  EncoderParams ep = make_encoder_params(rng);
  Tensor tokens({16, kTokenDim});
  for (size_t i = 0; i < tokens.size(); ++i) tokens[i] = rng.uniform(-1, 1);
  AttnProbe probe;
  encode_branch(g, tokens, ep, 4, &probe);
  for (const Tensor& a : probe.attention)
    for (size_t r = 0; r < a.shape()[0]; ++r) {
      double s = 0.0;
      for (size_t c = 0; c < a.shape()[1]; ++c) s += a(r, c);
      worst_rowsum = std::max(worst_rowsum, std::fabs(s - 1.0));
    }

  // singleton key returns K exactly
  bool singleton_exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor q({5, kTokenDim}), k({1, kTokenDim});
    for (size_t i = 0; i < q.size(); ++i) q[i] = rng.uniform(-2, 2);
    for (size_t i = 0; i < k.size(); ++i) k[i] = rng.uniform(-2, 2);
    Tensor out = cross_attention(g, q, k);
    for (size_t r = 0; r < 5; ++r)
      for (size_t c = 0; c < kTokenDim; ++c) singleton_exact &= out(r, c) == k(0, c);
  }

  // convex-hull envelope on 100 random cases
  bool hull_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const size_t nq = 1 + rng.below(6), nk = 1 + rng.below(6);
    Tensor q({nq, kTokenDim}), k({nk, kTokenDim});
    for (size_t i = 0; i < q.size(); ++i) q[i] = rng.uniform(-2, 2);
    for (size_t i = 0; i < k.size(); ++i) k[i] = rng.uniform(-2, 2);
    Tensor out = cross_attention(g, q, k);
    for (size_t c = 0; c < kTokenDim && hull_ok; ++c) {
      double lo = k(0, c), hi = k(0, c);
      for (size_t r = 1; r < nk; ++r) {
        lo = std::min(lo, k(r, c));
        hi = std::max(hi, k(r, c));
      }
      for (size_t r = 0; r < nq; ++r)
        hull_ok = hull_ok && out(r, c) >= lo - 1e-12 && out(r, c) <= hi + 1e-12;
    }
  }
  report(4, "attention contracts", worst_rowsum <= 1e-12 && singleton_exact && hull_ok,
         fmt("row-sum dev %.2e<=1e-12, singleton exact %s, hull-100 %s", worst_rowsum,
             singleton_exact ? "yes" : "NO", hull_ok ? "ok" : "VIOLATED"));
}

// --------------------------------------------------------------------------
// 5. loss composition
// --------------------------------------------------------------------------
void criterion_5() {
  Rng rng(55);
  HeadParams hp = make_head_params(rng);
  double worst_combo = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    Graph g;
    Tensor fused({16, kTokenDim});
    for (size_t i = 0; i < fused.size(); ++i) fused[i] = rng.uniform(-1, 1);
    ModelOutputs out = heads_forward(g, fused, hp, 4, 32, 32);
    Tensor mask({32, 32, 1});
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    LossBreakdown lb = total_loss(g, out, mask, static_cast<int>(rng.below(2)),
                                  static_cast<int>(rng.below(7)));
    worst_combo = std::max(
        worst_combo,
        std::fabs(lb.total[0] - (1.0 * lb.cls[0] + 0.5 * lb.loc[0] + 0.3 * lb.type[0])));
  }
  // zero logits -> p(fake) = 0.5 -> BCE = ln 2
  Graph g;
  Tensor fused({16, kTokenDim});
  ModelOutputs out = heads_forward(g, fused, hp, 4, 32, 32);
  Tensor mask({32, 32, 1});
  LossBreakdown lb = total_loss(g, out, mask, 1, 0);
  const double ln2_dev = std::fabs(lb.cls[0] - std::log(2.0));
  report(5, "loss composition (paper weights 1.0/0.5/0.3)",
         worst_combo <= 1e-12 && ln2_dev <= 1e-12,
         fmt("breakdown identity dev %.2e<=1e-12, ln2 dev %.2e<=1e-12", worst_combo, ln2_dev));
}

// --------------------------------------------------------------------------
// 6. FGSM bounds with the paper epsilon
// --------------------------------------------------------------------------
void criterion_6() {
  Rng rng(66);
  const double eps = 0.03;
  bool bound_ok = true, range_ok = true, interior_eq = true;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor img({16, 16, 3});
    for (size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    std::vector<double> grad(img.size());
    for (auto& v : grad) v = rng.uniform(-1, 1);
    Tensor adv = fgsm_perturb(img, grad, eps);
    for (size_t i = 0; i < img.size(); ++i) {
      const double d = std::fabs(adv[i] - img[i]);
      bound_ok = bound_ok && d <= eps;
      range_ok = range_ok && adv[i] >= 0.0 && adv[i] <= 1.0;
      if (grad[i] != 0.0 && img[i] > eps && img[i] < 1.0 - eps)
        interior_eq =
            interior_eq && std::fabs(d - eps) <= 8 * std::numeric_limits<double>::epsilon();
    }
  }
  report(6, "fgsm bounds (eps = 0.03)", bound_ok && range_ok && interior_eq,
         fmt("sup-norm<=eps %s, range [0,1] %s, interior saturation %s",
             bound_ok ? "ok" : "VIOLATED", range_ok ? "ok" : "VIOLATED",
             interior_eq ? "ok" : "VIOLATED"));
}

// --------------------------------------------------------------------------
// 7 and 9. reference training, then the robustness sweep on that model
// --------------------------------------------------------------------------
Model criterion_7() {
  auto t0 = Clock::now();
  TrainConfig cfg = reference_config();
  std::printf("  [running] reference training: 64x64, 32/class, 30 epochs, seed %llu\n",
              static_cast<unsigned long long>(cfg.seed));
  std::fflush(stdout);
  TrainResult tr = train_run(cfg, &std::cout);
  const double train_minutes = seconds_since(t0) / 60.0;
  const EpochStats& last = tr.history.back();

  // held-out splice/copy-move localization
  auto val = gen_toy_dataset(cfg.n_val_per_class, cfg.model.image_size,
                             derive_seed(cfg.seed, 0x7a1));
  std::vector<ForgerySample> rect_forgeries;
  for (auto& s : val)
    if (s.mtype == static_cast<int>(Manipulation::Splicing) ||
        s.mtype == static_cast<int>(Manipulation::CopyMove))
      rect_forgeries.push_back(s);
  EvalReport rects = evaluate_samples(tr.model, rect_forgeries, cfg.seed);

  report(7, "toy learning (reference run)",
         last.acc_train >= 0.95 && last.acc_val >= 0.85 && rects.iou >= 0.5,
         fmt("acc_train %.3f>=0.95, acc_val %.3f>=0.85, splice/copy-move IoU %.3f>=0.5, "
             "%.1f min wall",
             last.acc_train, last.acc_val, rects.iou, train_minutes));
  return std::move(tr.model);
}

void criterion_9(const Model& model) {
  TrainConfig cfg = reference_config();
  auto val = gen_toy_dataset(cfg.n_val_per_class, cfg.model.image_size,
                             derive_seed(cfg.seed, 0x7a1));
  EvalReport clean = evaluate_samples(model, val, cfg.seed);
  auto rows = robustness_sweep(model, val, cfg.seed);
  double q100_acc = 0.0;
  for (const auto& r : rows)
    if (r.perturbation == "jpeg" && r.param == 100.0) q100_acc = r.report.accuracy;
  const double q100_gap = std::fabs(q100_acc - clean.accuracy);

  ImageRGB texture(64, 64);
  Rng rng(99);
  for (size_t y = 0; y < 64; ++y)
    for (size_t x = 0; x < 64; ++x) {
      uint8_t* p = texture.px(x, y);
      const double base = 60.0 + 120.0 * (static_cast<double>(x + y) / 128.0);
      for (int c = 0; c < 3; ++c)
        p[c] = clamp_u8(base + 30.0 * std::sin(0.3 * x + c) + rng.uniform(-18.0, 18.0));
    }
  double prev = 1e18;
  bool monotone = true;
  for (int q : {70, 80, 90, 95, 100}) {
    ImageRGB out = jpeg_simulate(texture, q);
    double mse = 0.0;
    for (size_t i = 0; i < out.pixels.size(); ++i) {
      const double d =
          static_cast<double>(out.pixels[i]) - static_cast<double>(texture.pixels[i]);
      mse += d * d;
    }
    mse /= static_cast<double>(out.pixels.size());
    monotone = monotone && mse <= prev + 1e-12;
    prev = mse;
  }

  ImageRGB constant(32, 32);
  std::fill(constant.pixels.begin(), constant.pixels.end(), 143);
  bool blur_const_ok = true;
  for (double sg : {0.5, 1.0, 2.0})
    blur_const_ok = blur_const_ok && gaussian_blur(constant, sg).pixels == constant.pixels;

  report(9, "robustness properties (Q=100 vs clean, JPEG monotone, blur identity)",
         q100_gap <= 0.02 && monotone && blur_const_ok && rows.size() == 8,
         fmt("|acc(Q100)-clean| %.4f<=0.02, jpeg MSE monotone %s, constant-blur bit-identical "
             "%s, 8 rows",
             q100_gap, monotone ? "ok" : "NO", blur_const_ok ? "ok" : "NO"));
}

// --------------------------------------------------------------------------
// 8. ablation property on the spectral-cue-only set
// --------------------------------------------------------------------------
void criterion_8() {
  // algebraic half: zeroed-branch fusion equals the reduced-sum formula
  Rng rng(88);
  Graph g;
  g.set_recording(false);
  const size_t n = 16;
  Tensor h1({n, kTokenDim}), h2({n, kTokenDim}), zero({n, kTokenDim});
  for (size_t i = 0; i < h1.size(); ++i) h1[i] = rng.uniform(-1, 1);
  for (size_t i = 0; i < h2.size(); ++i) h2[i] = rng.uniform(-1, 1);
  FusionParams fp;
  Tensor masked = fuse(g, h1, h2, zero, fp);
  Tensor lm = cross_attention(g, h1, h2);
  double worst = 0.0;
  for (size_t i = 0; i < masked.size(); ++i)
    worst = std::max(worst, std::fabs(masked[i] - (h1[i] + h2[i] + lm[i])));

  // trained halves: spectral-cue-only set, low-only vs mid-only
  TrainConfig cfg;
  cfg.model.image_size = 64;
  cfg.model.seg_k = 4;
  cfg.dataset_kind = "spectral";
  cfg.lr = 2e-3;
  cfg.epochs = 16;
  cfg.warmup_epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 5;
  cfg.n_train_per_class = 16;
  cfg.n_val_per_class = 8;
  auto val = val_split_for(cfg);
  std::printf("  [running] spectral ablation: low-only and mid-only trainings\n");
  std::fflush(stdout);
  double acc[2] = {0.0, 0.0};
  for (int which = 0; which < 2; ++which) {
    TrainConfig c = cfg;
    c.branch_mask = which == 0 ? BranchMask{true, false, false} : BranchMask{false, true, false};
    TrainResult tr = train_run(c, nullptr);
    acc[which] = evaluate_samples(tr.model, val, c.seed, c.branch_mask).accuracy;
  }
  report(8, "ablation property (spectral-cue-only set)",
         worst == 0.0 && acc[0] - acc[1] >= 0.15,
         fmt("reduced-sum exact (dev %.1e), low-only %.3f vs mid-only %.3f, gap %.3f>=0.15",
             worst, acc[0], acc[1], acc[0] - acc[1]));
}

// --------------------------------------------------------------------------
// 10. determinism and serialization
// --------------------------------------------------------------------------
void criterion_10() {
  TrainConfig cfg;
  cfg.model.image_size = 32;
  cfg.model.seg_k = 4;
  cfg.lr = 1e-3;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 77;
  cfg.warmup_epochs = 1;
  cfg.adv_start_epoch = 1;  // exercise the adversarial phase too
  cfg.n_train_per_class = 2;
  cfg.n_val_per_class = 1;
  TrainResult a = train_run(cfg);
  TrainResult b = train_run(cfg);
  const bool csv_same = metrics_csv(a.history) == metrics_csv(b.history);

  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "ff_acceptance";
  fs::create_directories(dir);
  save_checkpoint(a.model, (dir / "a.ffck").string());
  save_checkpoint(b.model, (dir / "b.ffck").string());
  auto bytes_a = detail_ckpt::read_all((dir / "a.ffck").string());
  auto bytes_b = detail_ckpt::read_all((dir / "b.ffck").string());
  const bool ckpt_same = bytes_a == bytes_b;

  Model reloaded = load_checkpoint((dir / "a.ffck").string());
  bool roundtrip = reloaded.named.size() == a.model.named.size();
  for (size_t i = 0; roundtrip && i < a.model.named.size(); ++i)
    roundtrip = reloaded.named[i].second.values() == a.model.named[i].second.values();

  bool errors_classified = true;
  {
    auto bad = bytes_a;
    bad[0] = 'Z';
    detail_ckpt::write_all((dir / "magic.ffck").string(), bad);
    try {
      load_checkpoint((dir / "magic.ffck").string());
      errors_classified = false;
    } catch (const BadMagicError&) {
    } catch (...) {
      errors_classified = false;
    }
  }
  {
    auto bad = bytes_a;
    bad.resize(bad.size() - 8);
    detail_ckpt::write_all((dir / "trunc.ffck").string(), bad);
    try {
      load_checkpoint((dir / "trunc.ffck").string());
      errors_classified = false;
    } catch (const TruncatedFileError&) {
    } catch (...) {
      errors_classified = false;
    }
  }
  {
    auto bad = bytes_a;
    bad[4] = 9;
    detail_ckpt::write_all((dir / "version.ffck").string(), bad);
    try {
      load_checkpoint((dir / "version.ffck").string());
      errors_classified = false;
    } catch (const BadVersionError&) {
    } catch (...) {
      errors_classified = false;
    }
  }
  report(10, "determinism and serialization",
         csv_same && ckpt_same && roundtrip && errors_classified,
         fmt("metrics CSV identical %s, checkpoints byte-identical %s, round-trip bit-exact %s, "
             "error classes %s",
             csv_same ? "yes" : "NO", ckpt_same ? "yes" : "NO", roundtrip ? "yes" : "NO",
             errors_classified ? "ok" : "WRONG"));
}

// --------------------------------------------------------------------------
// 11. metric oracles
// --------------------------------------------------------------------------
void criterion_11() {
  Rng rng(111);
  double worst_auc = 0.0;
  size_t sets = 0;
  while (sets < 200) {
    const size_t n = 4 + rng.below(60);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool pos = false, neg = false;
    for (size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(11)) / 10.0;  // many ties
      labels[i] = static_cast<int>(rng.below(2));
      (labels[i] == 1 ? pos : neg) = true;
    }
    if (!pos || !neg) continue;
    ++sets;
    double wins = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j) {
        if (labels[i] != 1 || labels[j] != 0) continue;
        ++pairs;
        if (scores[i] > scores[j])
          wins += 1.0;
        else if (scores[i] == scores[j])
          wins += 0.5;
      }
    const double oracle = wins / static_cast<double>(pairs);
    worst_auc = std::max(worst_auc, std::fabs(auc_roc(scores, labels) - oracle));
  }

  double worst_identity = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    ImagePlane p(12, 12, 0.0), t(12, 12, 0.0);
    for (size_t i = 0; i < p.values.size(); ++i) {
      p.values[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
      t.values[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }
    PixelScore s = pixel_f1_iou(p, t);
    worst_identity = std::max(worst_identity, std::fabs(s.f1 - 2.0 * s.iou / (1.0 + s.iou)));
  }
  report(11, "metric oracles (AUC pair-counting, F1 = 2 IoU / (1 + IoU))",
         worst_auc <= 1e-12 && worst_identity <= 1e-12,
         fmt("auc dev %.2e over 200 sets, identity dev %.2e", worst_auc, worst_identity));
}

}  // namespace

int main() {
  std::printf("acceptance suite: 11 criteria\n");
  auto t0 = Clock::now();
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_11();
  criterion_10();
  criterion_8();
  Model reference_model = criterion_7();
  criterion_9(reference_model);
  std::printf("acceptance: %d of 11 criteria failed, total %.1f min\n", g_failures,
              seconds_since(t0) / 60.0);
  return g_failures == 0 ? 0 : 1;
}
