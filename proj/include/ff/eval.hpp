#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "ff/jpeg_sim.hpp"
#include "ff/metrics.hpp"
#include "ff/train.hpp"

namespace ff {

struct EvalReport {
  double accuracy = 0.0, auc_roc = 0.0, f1 = 0.0;
  double pixel_f1 = 0.0, iou = 0.0;  // averaged over fake samples only
  std::array<double, kNumClasses> per_type_acc{};
  std::array<size_t, kNumClasses> per_type_count{};
  size_t n = 0;
};

// Forward-only evaluation; per-sample work is parallel, reductions run in
// index order over integer counts and stored scores.
inline EvalReport evaluate_samples(const Model& m, const std::vector<ForgerySample>& samples,
                                   uint64_t seed, const BranchMask& mask = {}) {
  if (samples.empty()) throw ContractError("evaluate_samples: empty dataset");
  const size_t n = samples.size();
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  std::vector<double> ious(n, -1.0), f1s(n, -1.0);
  std::vector<int> type_pred(n), type_true(n);
  parallel_for(n, [&](size_t i) {
    detail_train::PreparedSample s = detail_train::prepare(samples[i], m.cfg, seed);
    Graph g;
    g.set_recording(false);
    ModelOutputs out = model_forward(g, m, s.features, mask);
    scores[i] = out.y_hat(0, 1);
    labels[i] = s.label;
    type_true[i] = s.mtype;
    size_t best = 0;
    for (size_t c = 1; c < kNumClasses; ++c)
      if (out.type_hat[c] > out.type_hat[best]) best = c;
    type_pred[i] = static_cast<int>(best);
    if (s.label == 1) {
      ImagePlane pred(m.cfg.image_size, m.cfg.image_size);
      pred.values.assign(out.mask_hat.values().begin(), out.mask_hat.values().end());
      ImagePlane truth(m.cfg.image_size, m.cfg.image_size);
      truth.values.assign(s.mask.values().begin(), s.mask.values().end());
      PixelScore ps = pixel_f1_iou(pred, truth);
      ious[i] = ps.iou;
      f1s[i] = ps.f1;
    }
  });
  EvalReport r;
  r.n = n;
  r.accuracy = accuracy(scores, labels);
  r.f1 = f1_score(scores, labels);
  bool has_pos = false, has_neg = false;
  for (int l : labels) (l == 1 ? has_pos : has_neg) = true;
  r.auc_roc = has_pos && has_neg ? auc_roc(scores, labels) : 0.5;
  double iou_sum = 0.0, f1_sum = 0.0;
  size_t fake_n = 0;
  std::array<size_t, kNumClasses> type_hits{};
  for (size_t i = 0; i < n; ++i) {
    if (ious[i] >= 0.0) {
      iou_sum += ious[i];
      f1_sum += f1s[i];
      ++fake_n;
    }
    const size_t t = static_cast<size_t>(type_true[i]);
    r.per_type_count[t]++;
    type_hits[t] += type_pred[i] == type_true[i] ? 1 : 0;
  }
  r.iou = fake_n > 0 ? iou_sum / static_cast<double>(fake_n) : 1.0;
  r.pixel_f1 = fake_n > 0 ? f1_sum / static_cast<double>(fake_n) : 1.0;
  for (size_t t = 0; t < kNumClasses; ++t)
    r.per_type_acc[t] = r.per_type_count[t] > 0
                            ? static_cast<double>(type_hits[t]) /
                                  static_cast<double>(r.per_type_count[t])
                            : 0.0;
  return r;
}

inline std::string eval_report_csv(const EvalReport& r) {
  std::string out =
      "accuracy,auc_roc,f1,pixel_f1,iou,acc_real,acc_copy_move,acc_splicing,acc_retouching,"
      "acc_gan,acc_diffusion,acc_deepfake,n\n";
  char line[512];
  std::snprintf(line, sizeof(line),
                "%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%zu\n",
                r.accuracy, r.auc_roc, r.f1, r.pixel_f1, r.iou, r.per_type_acc[0],
                r.per_type_acc[1], r.per_type_acc[2], r.per_type_acc[3], r.per_type_acc[4],
                r.per_type_acc[5], r.per_type_acc[6], r.n);
  return out + line;
}

// ---------------------------------------------------------------------------
// robustness sweep: JPEG Q in {70, 80, 90, 95, 100}, blur sigma in
// {0.5, 1.0, 2.0}; perturbations are applied to the network-input-sized image
// ---------------------------------------------------------------------------

struct SweepRow {
  std::string perturbation;
  double param = 0.0;
  EvalReport report;
};

inline std::vector<SweepRow> robustness_sweep(const Model& m,
                                              const std::vector<ForgerySample>& samples,
                                              uint64_t seed) {
  auto perturbed_eval = [&](const std::string& kind, double param) {
    std::vector<ForgerySample> mod(samples.size());
    parallel_for(samples.size(), [&](size_t i) {
      ForgerySample s = samples[i];
      if (s.image.width != m.cfg.image_size || s.image.height != m.cfg.image_size) {
        s.image = resize_bilinear(s.image, m.cfg.image_size, m.cfg.image_size);
        ImagePlane mask = resize_bilinear(s.mask, m.cfg.image_size, m.cfg.image_size);
        for (double& v : mask.values) v = v >= 0.5 ? 1.0 : 0.0;
        s.mask = std::move(mask);
      }
      if (kind == "jpeg")
        s.image = jpeg_simulate(s.image, static_cast<int>(param));
      else
        s.image = gaussian_blur(s.image, param);
      mod[i] = std::move(s);
    });
    return evaluate_samples(m, mod, seed);
  };
  std::vector<SweepRow> rows;
  for (int q : {70, 80, 90, 95, 100}) rows.push_back({"jpeg", static_cast<double>(q),
                                                      perturbed_eval("jpeg", q)});
  for (double sg : {0.5, 1.0, 2.0}) rows.push_back({"blur", sg, perturbed_eval("blur", sg)});
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "perturbation,param,accuracy,auc_roc,f1,pixel_f1,iou\n";
  char line[256];
  for (const SweepRow& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                  r.perturbation.c_str(), r.param, r.report.accuracy, r.report.auc_roc,
                  r.report.f1, r.report.pixel_f1, r.report.iou);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// ablation: trains under a branch mask (zeroed encoded tokens ahead of
// fusion) and evaluates on the held-out split
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string name;
  EvalReport report;
};

inline std::vector<ForgerySample> val_split_for(const TrainConfig& cfg) {
  if (!cfg.dataset_dir.empty()) {
    std::vector<ForgerySample> all = load_dataset(cfg.dataset_dir), val;
    for (size_t i = 0; i < all.size(); ++i)
      if (i % 5 == 4) val.push_back(std::move(all[i]));
    if (val.empty()) val.push_back(all.back());
    return val;
  }
  if (cfg.dataset_kind == "spectral")
    return gen_spectral_dataset(cfg.n_val_per_class, cfg.model.image_size,
                                derive_seed(cfg.seed, 0x7a1));
  return gen_toy_dataset(cfg.n_val_per_class, cfg.model.image_size,
                         derive_seed(cfg.seed, 0x7a1));
}

inline std::vector<AblationRow> ablation_run(const TrainConfig& base, std::ostream* log = nullptr) {
  const std::vector<std::pair<std::string, BranchMask>> configs = {
      {"full", {true, true, true}},
      {"low_only", {true, false, false}},
      {"mid_only", {false, true, false}},
      {"high_only", {false, false, true}},
  };
  std::vector<ForgerySample> val = val_split_for(base);
  std::vector<AblationRow> rows;
  for (const auto& [name, mask] : configs) {
    TrainConfig cfg = base;
    cfg.branch_mask = mask;
    if (log) (*log) << "[ablate] training configuration '" << name << "'\n";
    TrainResult tr = train_run(cfg, log);
    rows.push_back({name, evaluate_samples(tr.model, val, cfg.seed, mask)});
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "config,accuracy,auc_roc,f1\n";
  char line[256];
  for (const AblationRow& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%.12g,%.12g,%.12g\n", r.name.c_str(),
                  r.report.accuracy, r.report.auc_roc, r.report.f1);
    out += line;
  }
  return out;
}

}  // namespace ff
