#pragma once

#include <array>
#include <cmath>

#include "ff/encoder.hpp"
#include "ff/tensor.hpp"

namespace ff {

// Literal attention between token sequences: Softmax(Q K^T / sqrt(d_k)) K.
// No learned projections and the key sequence doubles as the value.
inline Tensor cross_attention(Graph& g, const Tensor& q, const Tensor& k) {
  if (q.ndim() != 2 || k.ndim() != 2 || q.shape()[1] != k.shape()[1])
    throw DimensionError("cross_attention: token dims differ");
  using namespace ff::ops;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
  Tensor attn = softmax_rows(g, scale(g, matmul_nt(g, q, k), inv_sqrt_d));
  return matmul(g, attn, k);
}

// Learned-projection variant, used only when the config enables it.
struct ProjectedCrossAttnParams {
  Tensor wq, wk, wv;  // [256x256] each
};

inline Tensor cross_attention_projected(Graph& g, const Tensor& q, const Tensor& k,
                                        const ProjectedCrossAttnParams& p) {
  using namespace ff::ops;
  Tensor qp = matmul(g, q, p.wq);
  Tensor kp = matmul(g, k, p.wk);
  Tensor vp = matmul(g, k, p.wv);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
  Tensor attn = softmax_rows(g, scale(g, matmul_nt(g, qp, kp), inv_sqrt_d));
  return matmul(g, attn, vp);
}

enum class FusionMode { CrossAttention, Concat };

struct FusionParams {
  // concat fusion: Linear(768 -> 256)
  Tensor concat_w, concat_b;
  // projected cross-attention, one set per ordered pair (low-mid, mid-high, low-high)
  bool projected = false;
  std::array<ProjectedCrossAttnParams, 3> proj;
};

// Six-term fused representation: the three encodings plus the pairwise
// cross-attention outputs low-mid, mid-high, low-high. `include_cross`
// exists as a test hook for the reduced three-term sum.
inline Tensor fuse(Graph& g, const Tensor& h_low, const Tensor& h_mid, const Tensor& h_high,
                   const FusionParams& p, FusionMode mode = FusionMode::CrossAttention,
                   bool include_cross = true) {
  using namespace ff::ops;
  if (mode == FusionMode::Concat) {
    Tensor cat = concat_last(g, {h_low, h_mid, h_high});
    return linear(g, cat, p.concat_w, p.concat_b);
  }
  Tensor out = add(g, add(g, h_low, h_mid), h_high);
  if (!include_cross) return out;
  Tensor lm = p.projected ? cross_attention_projected(g, h_low, h_mid, p.proj[0])
                          : cross_attention(g, h_low, h_mid);
  Tensor mh = p.projected ? cross_attention_projected(g, h_mid, h_high, p.proj[1])
                          : cross_attention(g, h_mid, h_high);
  Tensor lh = p.projected ? cross_attention_projected(g, h_low, h_high, p.proj[2])
                          : cross_attention(g, h_low, h_high);
  return add(g, add(g, add(g, out, lm), mh), lh);
}

// ---------------------------------------------------------------------------
// task heads
// ---------------------------------------------------------------------------

constexpr size_t kTypeClasses = 7;

struct HeadParams {
  Tensor cls_w, cls_b;    // [256x2], [2]
  Tensor mask_w, mask_b;  // [256x1], [1]
  Tensor type_w, type_b;  // [256x7], [7]
};

inline HeadParams make_head_params(Rng& rng) {
  HeadParams p;
  p.cls_w = uniform_init({kTokenDim, 2}, kTokenDim, rng);
  p.cls_b = Tensor({2});
  p.mask_w = uniform_init({kTokenDim, 1}, kTokenDim, rng);
  p.mask_b = Tensor({1});
  p.type_w = uniform_init({kTokenDim, kTypeClasses}, kTokenDim, rng);
  p.type_b = Tensor({kTypeClasses});
  return p;
}

struct ModelOutputs {
  Tensor z_cls;        // [1 x 2] logits
  Tensor y_hat;        // [1 x 2] sigmoid probabilities; component 1 = p(fake)
  Tensor z_type;       // [1 x 7] logits
  Tensor type_hat;     // [1 x 7] softmax
  Tensor mask_logits;  // [H x W x 1]
  Tensor mask_hat;     // [H x W x 1] sigmoid
};

// GAP + linear heads; the localization head is a 1x1 convolution over the
// token grid, bilinearly upsampled to the image size, then a sigmoid.
inline ModelOutputs heads_forward(Graph& g, const Tensor& h_fused, const HeadParams& p,
                                  size_t grid, size_t out_h, size_t out_w) {
  using namespace ff::ops;
  if (h_fused.ndim() != 2 || h_fused.shape()[1] != kTokenDim ||
      h_fused.shape()[0] != grid * grid)
    throw DimensionError("heads_forward: fused tokens must be [G*G x 256]");
  ModelOutputs out;
  Tensor gap = mean_rows(g, h_fused);
  out.z_cls = linear(g, gap, p.cls_w, p.cls_b);
  out.y_hat = sigmoid(g, out.z_cls);
  out.z_type = linear(g, gap, p.type_w, p.type_b);
  out.type_hat = softmax_rows(g, out.z_type);
  Tensor a = linear(g, h_fused, p.mask_w, p.mask_b);  // 1x1 conv over the grid
  Tensor a_grid = reshape(g, a, {grid, grid, 1});
  out.mask_logits = bilinear_resize(g, a_grid, out_h, out_w);
  out.mask_hat = sigmoid(g, out.mask_logits);
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

struct LossWeights {
  double cls = 1.0;
  double loc = 0.5;
  double type = 0.3;
};

constexpr double kDiceEps = 1.0;
constexpr double kLambdaDice = 1.0;

struct LossBreakdown {
  Tensor cls, loc, type, total;  // scalars on the graph
};

// total = w_cls * BCE(y1, label)
//       + w_loc * (BCE(mask) + lambda_dice * (1 - Dice))
//       + w_type * CE(type)
inline LossBreakdown total_loss(Graph& g, const ModelOutputs& out, const Tensor& mask_target,
                                int label, int mtype, const LossWeights& w = {},
                                double lambda_dice = kLambdaDice, double dice_eps = kDiceEps) {
  using namespace ff::ops;
  if (label != 0 && label != 1) throw ContractError("total_loss: label must be 0 or 1");
  if (mtype < 0 || mtype >= static_cast<int>(kTypeClasses))
    throw ContractError("total_loss: manipulation type out of range");
  if (mask_target.shape() != out.mask_logits.shape())
    throw DimensionError("total_loss: mask shape mismatch");

  LossBreakdown lb;
  Tensor z1 = pick(g, out.z_cls, 1);  // the "fake" component carries the loss
  lb.cls = bce_with_logits_mean(g, z1, Tensor::from({1}, {static_cast<double>(label)}));

  Tensor bce = bce_with_logits_mean(g, out.mask_logits, mask_target);
  double mask_sum = 0.0;
  for (size_t i = 0; i < mask_target.size(); ++i) mask_sum += mask_target[i];
  Tensor s1 = sum_all(g, mul(g, out.mask_hat, mask_target));
  Tensor s2 = sum_all(g, out.mask_hat);
  Tensor dice = div(g, add_const(g, scale(g, s1, 2.0), dice_eps),
                    add_const(g, s2, mask_sum + dice_eps));
  Tensor dice_loss = scale(g, add_const(g, scale(g, dice, -1.0), 1.0), lambda_dice);
  lb.loc = add(g, bce, dice_loss);

  lb.type = ce_from_logits(g, out.z_type, static_cast<size_t>(mtype));

  lb.total = add(g, add(g, scale(g, lb.cls, w.cls), scale(g, lb.loc, w.loc)),
                 scale(g, lb.type, w.type));
  return lb;
}

}  // namespace ff
