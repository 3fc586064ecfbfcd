#pragma once

#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "ff/branch_high.hpp"
#include "ff/branch_low.hpp"
#include "ff/branch_mid.hpp"
#include "ff/encoder.hpp"
#include "ff/fusion.hpp"

namespace ff {

struct ModelConfig {
  size_t image_size = 64;
  int seg_k = 6;
  FusionMode fusion = FusionMode::CrossAttention;
  bool projected_cross_attention = false;
  LossWeights loss_weights{};
  double lambda_dice = kLambdaDice;
  double dice_eps = kDiceEps;

  size_t grid() const { return image_size / 8; }

  void validate() const {
    if (image_size < 32 || image_size % 8 != 0)
      throw ConfigError("image_size must be a multiple of 8 and at least 32");
    if (seg_k < 1 || seg_k > 19) throw ConfigError("seg_k must be in [1, 19]");
    if (lambda_dice < 0.0 || dice_eps <= 0.0)
      throw ConfigError("lambda_dice must be >= 0 and dice_eps > 0");
  }

  nlohmann::json to_json() const {
    return {{"image_size", image_size},
            {"seg_k", seg_k},
            {"fusion", fusion == FusionMode::CrossAttention ? "cross_attention" : "concat"},
            {"projected_cross_attention", projected_cross_attention},
            {"loss_weights", {loss_weights.cls, loss_weights.loc, loss_weights.type}},
            {"lambda_dice", lambda_dice},
            {"dice_eps", dice_eps}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.seg_k = j.value("seg_k", c.seg_k);
    const std::string fusion = j.value("fusion", std::string("cross_attention"));
    if (fusion == "cross_attention")
      c.fusion = FusionMode::CrossAttention;
    else if (fusion == "concat")
      c.fusion = FusionMode::Concat;
    else
      throw ConfigError("fusion must be 'cross_attention' or 'concat'");
    c.projected_cross_attention = j.value("projected_cross_attention", false);
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      if (!w.is_array() || w.size() != 3) throw ConfigError("loss_weights must be [cls, loc, type]");
      c.loss_weights = {w[0].get<double>(), w[1].get<double>(), w[2].get<double>()};
    }
    c.lambda_dice = j.value("lambda_dice", c.lambda_dice);
    c.dice_eps = j.value("dice_eps", c.dice_eps);
    c.validate();
    return c;
  }
};

// The full network: three branch stems, three encoders, fusion, heads.
// `named` lists every learned tensor in a canonical order shared by
// initialization, the optimizer, and the checkpoint format.
struct Model {
  ModelConfig cfg;
  LowBranchParams low;
  MidBranchParams mid;
  HighBranchParams high;
  EncoderParams enc_low, enc_mid, enc_high;
  FusionParams fusion;
  HeadParams heads;
  std::vector<std::pair<std::string, Tensor>> named;

  static Model init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(derive_seed(seed, 0x30de1));
    m.low = make_low_params(rng);
    m.mid = make_mid_params(rng);
    m.high = make_high_params(rng);
    m.enc_low = make_encoder_params(rng);
    m.enc_mid = make_encoder_params(rng);
    m.enc_high = make_encoder_params(rng);
    if (cfg.fusion == FusionMode::Concat) {
      m.fusion.concat_w = uniform_init({3 * kTokenDim, kTokenDim}, 3 * kTokenDim, rng);
      m.fusion.concat_b = Tensor({kTokenDim});
    }
    if (cfg.projected_cross_attention) {
      m.fusion.projected = true;
      for (auto& pr : m.fusion.proj) {
        pr.wq = uniform_init({kTokenDim, kTokenDim}, kTokenDim, rng);
        pr.wk = uniform_init({kTokenDim, kTokenDim}, kTokenDim, rng);
        pr.wv = uniform_init({kTokenDim, kTokenDim}, kTokenDim, rng);
      }
    }
    m.heads = make_head_params(rng);
    m.rebuild_registry();
    m.set_requires_grad(true);
    return m;
  }

  void rebuild_registry() {
    named.clear();
    auto reg = [&](const std::string& name, Tensor& t) { named.emplace_back(name, t); };
    reg("low.conv_dct", low.conv_dct);
    reg("low.bias_dct", low.bias_dct);
    reg("low.conv_dwt", low.conv_dwt);
    reg("low.bias_dwt", low.bias_dwt);
    reg("low.conv_srm", low.conv_srm);
    reg("low.bias_srm", low.bias_srm);
    reg("low.proj_w", low.proj_w);
    reg("low.proj_b", low.proj_b);
    reg("mid.conv", mid.conv);
    reg("mid.bias", mid.bias);
    reg("mid.proj_w", mid.proj_w);
    reg("mid.proj_b", mid.proj_b);
    reg("high.conv", high.conv);
    reg("high.bias", high.bias);
    reg("high.proj_w", high.proj_w);
    reg("high.proj_b", high.proj_b);
    const char* enc_names[3] = {"enc.low", "enc.mid", "enc.high"};
    EncoderParams* encs[3] = {&enc_low, &enc_mid, &enc_high};
    for (int e = 0; e < 3; ++e)
      for (size_t li = 0; li < encs[e]->layers.size(); ++li) {
        auto& l = encs[e]->layers[li];
        const std::string base = std::string(enc_names[e]) + ".l" + std::to_string(li) + ".";
        reg(base + "wq", l.wq);
        reg(base + "bq", l.bq);
        reg(base + "wk", l.wk);
        reg(base + "bk", l.bk);
        reg(base + "wv", l.wv);
        reg(base + "bv", l.bv);
        reg(base + "wo", l.wo);
        reg(base + "bo", l.bo);
        reg(base + "ln1_g", l.ln1_g);
        reg(base + "ln1_b", l.ln1_b);
        reg(base + "ln2_g", l.ln2_g);
        reg(base + "ln2_b", l.ln2_b);
        reg(base + "ffn_w1", l.ffn_w1);
        reg(base + "ffn_b1", l.ffn_b1);
        reg(base + "ffn_w2", l.ffn_w2);
        reg(base + "ffn_b2", l.ffn_b2);
      }
    if (cfg.fusion == FusionMode::Concat) {
      reg("fusion.concat_w", fusion.concat_w);
      reg("fusion.concat_b", fusion.concat_b);
    }
    if (cfg.projected_cross_attention) {
      const char* pair_names[3] = {"fusion.lm", "fusion.mh", "fusion.lh"};
      for (int i = 0; i < 3; ++i) {
        reg(std::string(pair_names[i]) + ".wq", fusion.proj[static_cast<size_t>(i)].wq);
        reg(std::string(pair_names[i]) + ".wk", fusion.proj[static_cast<size_t>(i)].wk);
        reg(std::string(pair_names[i]) + ".wv", fusion.proj[static_cast<size_t>(i)].wv);
      }
    }
    reg("heads.cls_w", heads.cls_w);
    reg("heads.cls_b", heads.cls_b);
    reg("heads.mask_w", heads.mask_w);
    reg("heads.mask_b", heads.mask_b);
    reg("heads.type_w", heads.type_w);
    reg("heads.type_b", heads.type_b);
  }

  void set_requires_grad(bool v) {
    for (auto& [name, t] : named) t.set_requires_grad(v);
  }

  void zero_grads() {
    for (auto& [name, t] : named) t.zero_grad();
  }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& [name, t] : named) n += t.size();
    return n;
  }
};

// fixed per-image transforms; reusable as constants across many graphs
struct SampleFeatures {
  LowFeatures low;
  MidFeatures mid;
  HighFeatures high;
  SegmentMap seg;
};

inline SampleFeatures compute_sample_features(const Tensor& img01, const ModelConfig& cfg,
                                              uint64_t seed,
                                              const SegmentMap* seg_override = nullptr,
                                              const ImagePlane* depth_override = nullptr) {
  if (img01.ndim() != 3 || img01.shape()[2] != 3 || img01.shape()[0] != cfg.image_size ||
      img01.shape()[1] != cfg.image_size)
    throw DimensionError("compute_sample_features: image must be resized to the model size");
  Graph off;
  off.set_recording(false);
  SampleFeatures f;
  f.seg = seg_override ? *seg_override
                       : segment(img01, cfg.seg_k, derive_seed(seed, 0x5e91a));
  f.low = compute_low_features(off, img01);
  f.mid = compute_mid_features(off, img01, f.seg);
  f.high = compute_high_features(img01, depth_override);
  return f;
}

// Differentiable-feature variant for input-gradient passes: the low branch
// and the smooth mid channels are recorded on the live graph; the high
// branch stack is reused from the cached features (constant by design).
inline SampleFeatures compute_sample_features_live(Graph& g, const Tensor& img01,
                                                   const SampleFeatures& cached) {
  SampleFeatures f;
  f.seg = cached.seg;
  f.low = compute_low_features(g, img01);
  f.mid = compute_mid_features(g, img01, cached.seg);
  f.high = cached.high;
  return f;
}

struct BranchMask {
  bool low = true, mid = true, high = true;
  bool all() const { return low && mid && high; }
  bool any() const { return low || mid || high; }
};

struct ForwardHooks {
  AttnProbe* probe = nullptr;
  // encoded per-branch tokens, exposed for the branch heatmap output
  Tensor h_low, h_mid, h_high;
};

// Full forward pass from cached/live features to the three task outputs.
// Masked branches contribute zero encoded tokens ahead of fusion.
inline ModelOutputs model_forward(Graph& g, const Model& m, const SampleFeatures& f,
                                  const BranchMask& mask = {}, ForwardHooks* hooks = nullptr) {
  if (!mask.any()) throw ContractError("model_forward: all branches disabled");
  const size_t grid = m.cfg.grid();
  Tensor zero({grid * grid, kTokenDim});
  Tensor h_low = zero, h_mid = zero, h_high = zero;
  if (mask.low) {
    Tensor t = low_branch_forward(g, f.low, m.low, grid);
    h_low = encode_branch(g, t, m.enc_low, grid, hooks ? hooks->probe : nullptr);
  }
  if (mask.mid) {
    Tensor t = mid_branch_forward(g, f.mid, m.mid, grid);
    h_mid = encode_branch(g, t, m.enc_mid, grid, hooks ? hooks->probe : nullptr);
  }
  if (mask.high) {
    Tensor t = high_branch_forward(g, f.high, m.high, grid);
    h_high = encode_branch(g, t, m.enc_high, grid, hooks ? hooks->probe : nullptr);
  }
  if (hooks) {
    hooks->h_low = h_low;
    hooks->h_mid = h_mid;
    hooks->h_high = h_high;
  }
  Tensor fused = fuse(g, h_low, h_mid, h_high, m.fusion, m.cfg.fusion);
  return heads_forward(g, fused, m.heads, grid, m.cfg.image_size, m.cfg.image_size);
}

}  // namespace ff
