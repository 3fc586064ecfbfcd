#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <json.hpp>
#include <ostream>
#include <string>
#include <vector>

#include "ff/checkpoint.hpp"
#include "ff/dataset.hpp"
#include "ff/metrics.hpp"
#include "ff/model.hpp"
#include "ff/optim.hpp"
#include "ff/parallel.hpp"

namespace ff {

// I_adv = clamp(I + eps * sign(grad), 0, 1) with sign(0) = 0. The sup-norm
// bound |I_adv - I| <= eps is enforced bit-exactly (one-ulp rounding
// overshoot is nudged back toward I).
inline Tensor fgsm_perturb(const Tensor& img, const std::vector<double>& grad, double eps) {
  if (eps <= 0.0) throw ContractError("fgsm_perturb: eps must be positive");
  if (grad.size() != img.size())
    throw DimensionError("fgsm_perturb: gradient shape does not match the image");
  Tensor adv(img.shape());
  for (size_t i = 0; i < img.size(); ++i) {
    const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    double v = std::clamp(img[i] + eps * s, 0.0, 1.0);
    while (std::fabs(v - img[i]) > eps) v = std::nextafter(v, img[i]);
    adv[i] = v;
  }
  return adv;
}

struct TrainConfig {
  ModelConfig model;
  double lr = 1e-4;  // paper-scale default; the reference toy run overrides it
  double weight_decay = 0.01;
  size_t epochs = 30;
  size_t t_max = 0;  // cosine horizon; 0 means epochs
  size_t batch_size = 8;
  uint64_t seed = 1;
  double fgsm_eps = 0.03;
  double adv_clean_weight = 0.7;
  double adv_weight = 0.3;
  long adv_start_epoch = -1;  // -1 disables the adversarial phase
  size_t warmup_epochs = 5;   // classification-only epochs
  size_t n_train_per_class = 32;
  size_t n_val_per_class = 8;
  std::string dataset_kind = "standard";  // standard | spectral
  std::string dataset_dir;                // optional images/masks/labels.csv tree
  BranchMask branch_mask;

  size_t cosine_horizon() const { return t_max == 0 ? epochs : t_max; }

  void validate() const {
    std::vector<std::string> bad;
    if (lr <= 0.0) bad.push_back("lr must be positive");
    if (weight_decay < 0.0) bad.push_back("weight_decay must be >= 0");
    if (epochs < 1) bad.push_back("epochs must be >= 1");
    if (batch_size < 1) bad.push_back("batch_size must be >= 1");
    if (fgsm_eps <= 0.0) bad.push_back("fgsm_eps must be positive");
    if (adv_clean_weight < 0.0 || adv_weight < 0.0 ||
        std::fabs(adv_clean_weight + adv_weight - 1.0) > 1e-12)
      bad.push_back("adv mix weights must be nonnegative and sum to 1");
    if (warmup_epochs >= epochs) bad.push_back("warmup_epochs must be below epochs");
    if (adv_start_epoch >= 0 && static_cast<size_t>(adv_start_epoch) < warmup_epochs)
      bad.push_back("adv_start_epoch must not precede the warmup phase");
    if (adv_start_epoch >= static_cast<long>(epochs))
      bad.push_back("adv_start_epoch must be below epochs");
    if (n_train_per_class < 1 || n_val_per_class < 1)
      bad.push_back("dataset sizes must be >= 1");
    if (dataset_kind != "standard" && dataset_kind != "spectral")
      bad.push_back("dataset must be 'standard' or 'spectral'");
    if (!branch_mask.any()) bad.push_back("branch_mask must enable at least one branch");
    try {
      model.validate();
    } catch (const ConfigError& e) {
      bad.push_back(e.what());
    }
    if (!bad.empty()) {
      std::string msg = "invalid config:";
      for (const auto& b : bad) msg += "\n  - " + b;
      throw ConfigError(msg);
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = model.to_json();
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["epochs"] = epochs;
    j["t_max"] = t_max;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["fgsm_eps"] = fgsm_eps;
    j["adv_mix"] = {adv_clean_weight, adv_weight};
    j["adv_start_epoch"] = adv_start_epoch;
    j["warmup_epochs"] = warmup_epochs;
    j["n_train_per_class"] = n_train_per_class;
    j["n_val_per_class"] = n_val_per_class;
    j["dataset"] = dataset_kind;
    j["dataset_dir"] = dataset_dir;
    j["branch_mask"] = {branch_mask.low, branch_mask.mid, branch_mask.high};
    return j;
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.model = ModelConfig::from_json(j);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.t_max = j.value("t_max", c.t_max);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.fgsm_eps = j.value("fgsm_eps", c.fgsm_eps);
    if (j.contains("adv_mix")) {
      const auto& m = j.at("adv_mix");
      if (!m.is_array() || m.size() != 2) throw ConfigError("adv_mix must be [clean, adversarial]");
      c.adv_clean_weight = m[0].get<double>();
      c.adv_weight = m[1].get<double>();
    }
    c.adv_start_epoch = j.value("adv_start_epoch", c.adv_start_epoch);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.n_train_per_class = j.value("n_train_per_class", c.n_train_per_class);
    c.n_val_per_class = j.value("n_val_per_class", c.n_val_per_class);
    c.dataset_kind = j.value("dataset", c.dataset_kind);
    c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
    if (j.contains("branch_mask")) {
      const auto& b = j.at("branch_mask");
      if (!b.is_array() || b.size() != 3) throw ConfigError("branch_mask must be [low, mid, high]");
      c.branch_mask = {b[0].get<bool>(), b[1].get<bool>(), b[2].get<bool>()};
    }
    c.validate();
    return c;
  }
};

// desk-scale reference run: 64x64 images, 32 samples/class, 30 epochs,
// classification warmup then all heads, adversarial tail from epoch 26
inline TrainConfig reference_config() {
  TrainConfig c;
  c.model.image_size = 64;
  c.lr = 1e-3;
  c.epochs = 30;
  c.batch_size = 8;
  c.seed = 1;
  c.warmup_epochs = 5;
  c.adv_start_epoch = 26;
  c.n_train_per_class = 32;
  c.n_val_per_class = 8;
  return c;
}

struct EpochStats {
  size_t epoch = 0;
  double lr = 0.0;
  double l_cls = 0.0, l_loc = 0.0, l_type = 0.0, l_total = 0.0;
  double acc_train = 0.0, acc_val = 0.0, iou_val = 0.0;
};

inline std::string metrics_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,lr,l_cls,l_loc,l_type,l_total,acc_train,acc_val,iou_val\n";
  char line[256];
  for (const EpochStats& e : history) {
    std::snprintf(line, sizeof(line), "%zu,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                  e.epoch, e.lr, e.l_cls, e.l_loc, e.l_type, e.l_total, e.acc_train, e.acc_val,
                  e.iou_val);
    out += line;
  }
  return out;
}

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
};

namespace detail_train {

struct PreparedSample {
  Tensor image;   // [S x S x 3] in [0,1]
  Tensor mask;    // [S x S x 1]
  int label = 0;
  int mtype = 0;
  SampleFeatures features;
};

inline PreparedSample prepare(const ForgerySample& s, const ModelConfig& cfg, uint64_t seed) {
  PreparedSample p;
  ImageRGB img = s.image;
  ImagePlane mask = s.mask;
  if (img.width != cfg.image_size || img.height != cfg.image_size) {
    img = resize_bilinear(img, cfg.image_size, cfg.image_size);
    mask = resize_bilinear(mask, cfg.image_size, cfg.image_size);
    for (double& v : mask.values) v = v >= 0.5 ? 1.0 : 0.0;
  }
  p.image = image_to_tensor(img);
  p.mask = Tensor::from({cfg.image_size, cfg.image_size, 1}, mask.values);
  p.label = s.label;
  p.mtype = s.mtype;
  p.features = compute_sample_features(p.image, cfg, seed);
  return p;
}

// per-sample statistics gathered during a training batch
struct SampleStat {
  double l_cls = 0.0, l_loc = 0.0, l_type = 0.0, l_total = 0.0;
  bool correct = false;
  const char* bad_term = nullptr;
};

inline void check_finite(const LossBreakdown& lb, SampleStat& stat) {
  if (!std::isfinite(lb.cls[0])) stat.bad_term = "l_cls";
  else if (!std::isfinite(lb.loc[0])) stat.bad_term = "l_loc";
  else if (!std::isfinite(lb.type[0])) stat.bad_term = "l_type";
  else if (!std::isfinite(lb.total[0])) stat.bad_term = "l_total";
}

}  // namespace detail_train

// Deterministic data-parallel training. Gradients are accumulated in four
// fixed sample groups and merged in group order, so results do not depend
// on how many worker threads actually run.
inline TrainResult train_run(const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  using detail_train::PreparedSample;

  std::vector<ForgerySample> train_raw, val_raw;
  if (!cfg.dataset_dir.empty()) {
    std::vector<ForgerySample> all = load_dataset(cfg.dataset_dir);
    for (size_t i = 0; i < all.size(); ++i)
      (i % 5 == 4 ? val_raw : train_raw).push_back(std::move(all[i]));
    if (val_raw.empty()) val_raw.push_back(train_raw.back());
  } else if (cfg.dataset_kind == "spectral") {
    train_raw = gen_spectral_dataset(cfg.n_train_per_class, cfg.model.image_size, cfg.seed);
    val_raw = gen_spectral_dataset(cfg.n_val_per_class, cfg.model.image_size,
                                   derive_seed(cfg.seed, 0x7a1));
  } else {
    train_raw = gen_toy_dataset(cfg.n_train_per_class, cfg.model.image_size, cfg.seed);
    val_raw = gen_toy_dataset(cfg.n_val_per_class, cfg.model.image_size,
                              derive_seed(cfg.seed, 0x7a1));
  }

  std::vector<PreparedSample> train(train_raw.size()), val(val_raw.size());
  parallel_for(train_raw.size(), [&](size_t i) {
    train[i] = detail_train::prepare(train_raw[i], cfg.model, cfg.seed);
  });
  parallel_for(val_raw.size(), [&](size_t i) {
    val[i] = detail_train::prepare(val_raw[i], cfg.model, cfg.seed);
  });

  Model model = Model::init(cfg.model, cfg.seed);
  AdamWState opt_state = AdamWState::for_model(model);

  constexpr size_t kGroups = 4;  // fixed grouping keeps runs thread-count independent
  std::array<GradMap, kGroups> sinks;
  std::array<GradMap, kGroups> probe_sinks;
  std::vector<std::vector<double>> grads(model.named.size());
  for (size_t p = 0; p < model.named.size(); ++p)
    grads[p].assign(model.named[p].second.size(), 0.0);

  TrainResult result{std::move(model), {}};
  Model& m = result.model;

  const LossWeights& lw = m.cfg.loss_weights;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.cosine_horizon(), cfg.lr);
    const bool cls_only = epoch < cfg.warmup_epochs;
    const bool adversarial =
        cfg.adv_start_epoch >= 0 && epoch >= static_cast<size_t>(cfg.adv_start_epoch);

    // seeded shuffle (Fisher-Yates)
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, 0xe90c, epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.below(i))]);

    double sum_cls = 0.0, sum_loc = 0.0, sum_type = 0.0;
    size_t correct = 0;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t batch_n = std::min(cfg.batch_size, order.size() - start);
      std::vector<detail_train::SampleStat> stats(batch_n);
      std::array<std::exception_ptr, kGroups> errors{};

      parallel_for(kGroups, [&](size_t group) {
        try {
          for (size_t b = group; b < batch_n; b += kGroups) {
            const PreparedSample& s = train[order[start + b]];
            detail_train::SampleStat& stat = stats[b];
            Graph g1;
            ModelOutputs out = model_forward(g1, m, s.features, cfg.branch_mask);
            LossBreakdown lb = total_loss(g1, out, s.mask, s.label, s.mtype, lw,
                                          m.cfg.lambda_dice, m.cfg.dice_eps);
            detail_train::check_finite(lb, stat);
            if (stat.bad_term) return;
            stat.l_cls = lb.cls[0];
            stat.l_loc = lb.loc[0];
            stat.l_type = lb.type[0];
            stat.l_total = lb.total[0];
            stat.correct = (out.y_hat(0, 1) >= 0.5 ? 1 : 0) == s.label;
            const Tensor& objective = cls_only ? lb.cls : lb.total;

            if (!adversarial) {
              g1.backward_into(objective, sinks[group]);
              continue;
            }
            // FGSM probe: classification loss gradient with respect to the image
            Tensor img = s.image.clone();
            img.set_requires_grad(true);
            Graph gp;
            SampleFeatures live = compute_sample_features_live(gp, img, s.features);
            ModelOutputs pout = model_forward(gp, m, live, cfg.branch_mask);
            LossBreakdown plb = total_loss(gp, pout, s.mask, s.label, s.mtype, lw,
                                           m.cfg.lambda_dice, m.cfg.dice_eps);
            for (auto& [ptr, buf] : probe_sinks[group]) std::fill(buf.begin(), buf.end(), 0.0);
            gp.backward_into(plb.cls, probe_sinks[group]);
            auto it = probe_sinks[group].find(img.raw());
            static const std::vector<double> kNoGrad;
            const std::vector<double>& igrad =
                it != probe_sinks[group].end() ? it->second : kNoGrad;
            Tensor adv = igrad.empty() ? s.image.clone()
                                       : fgsm_perturb(s.image, igrad, cfg.fgsm_eps);
            SampleFeatures adv_features = compute_sample_features(adv, m.cfg, cfg.seed);
            Graph g2;
            ModelOutputs out2 = model_forward(g2, m, adv_features, cfg.branch_mask);
            LossBreakdown lb2 = total_loss(g2, out2, s.mask, s.label, s.mtype, lw,
                                           m.cfg.lambda_dice, m.cfg.dice_eps);
            detail_train::check_finite(lb2, stat);
            if (stat.bad_term) return;
            const Tensor& objective2 = cls_only ? lb2.cls : lb2.total;
            g1.backward_into(objective, sinks[group], cfg.adv_clean_weight);
            g2.backward_into(objective2, sinks[group], cfg.adv_weight);
          }
        } catch (...) {
          errors[group] = std::current_exception();
        }
      });
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
      for (const auto& stat : stats)
        if (stat.bad_term)
          throw ContractError(std::string("non-finite loss term ") + stat.bad_term +
                              " at epoch " + std::to_string(epoch));

      for (const auto& stat : stats) {
        sum_cls += stat.l_cls;
        sum_loc += stat.l_loc;
        sum_type += stat.l_type;
        correct += stat.correct ? 1 : 0;
      }

      // merge group gradients in fixed order, averaged over the batch
      const double inv_batch = 1.0 / static_cast<double>(batch_n);
      for (size_t p = 0; p < m.named.size(); ++p) {
        std::vector<double>& acc = grads[p];
        std::fill(acc.begin(), acc.end(), 0.0);
        const TensorData* key = m.named[p].second.raw();
        for (size_t group = 0; group < kGroups; ++group) {
          auto it = sinks[group].find(key);
          if (it == sinks[group].end()) continue;
          const std::vector<double>& gsum = it->second;
          for (size_t i = 0; i < acc.size(); ++i) acc[i] += gsum[i];
        }
        for (double& v : acc) v *= inv_batch;
      }
      for (auto& sink : sinks)
        for (auto& [ptr, buf] : sink) std::fill(buf.begin(), buf.end(), 0.0);

      AdamWParams hp;
      hp.lr = lr;
      hp.weight_decay = cfg.weight_decay;
      adamw_step(m, grads, opt_state, hp);
    }

    // validation pass (forward only, order-independent reductions)
    std::vector<double> val_scores(val.size());
    std::vector<int> val_labels(val.size());
    std::vector<double> val_iou(val.size(), -1.0);
    parallel_for(val.size(), [&](size_t i) {
      Graph g;
      g.set_recording(false);
      ModelOutputs out = model_forward(g, m, val[i].features, cfg.branch_mask);
      val_scores[i] = out.y_hat(0, 1);
      val_labels[i] = val[i].label;
      if (val[i].label == 1) {
        ImagePlane pred(m.cfg.image_size, m.cfg.image_size);
        pred.values.assign(out.mask_hat.values().begin(), out.mask_hat.values().end());
        ImagePlane truth(m.cfg.image_size, m.cfg.image_size);
        truth.values.assign(val[i].mask.values().begin(), val[i].mask.values().end());
        val_iou[i] = pixel_f1_iou(pred, truth).iou;
      }
    });
    double iou_sum = 0.0;
    size_t iou_n = 0;
    for (double v : val_iou)
      if (v >= 0.0) {
        iou_sum += v;
        ++iou_n;
      }

    EpochStats es;
    es.epoch = epoch;
    es.lr = lr;
    const double inv_n = 1.0 / static_cast<double>(train.size());
    es.l_cls = sum_cls * inv_n;
    es.l_loc = sum_loc * inv_n;
    es.l_type = sum_type * inv_n;
    es.l_total = lw.cls * es.l_cls + lw.loc * es.l_loc + lw.type * es.l_type;
    es.acc_train = static_cast<double>(correct) * inv_n;
    es.acc_val = accuracy(val_scores, val_labels);
    es.iou_val = iou_n > 0 ? iou_sum / static_cast<double>(iou_n) : 0.0;
    result.history.push_back(es);
    if (log) {
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "epoch %2zu lr %.5g l_total %.4f acc_train %.3f acc_val %.3f iou_val %.3f\n",
                    epoch, lr, es.l_total, es.acc_train, es.acc_val, es.iou_val);
      (*log) << buf << std::flush;
    }
  }
  return result;
}

}  // namespace ff
