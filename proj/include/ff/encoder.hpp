#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <vector>

#include "ff/image.hpp"
#include "ff/tensor.hpp"

namespace ff {

constexpr size_t kEncLayers = 4;
constexpr size_t kEncHeads = 8;
constexpr size_t kHeadDim = kTokenDim / kEncHeads;  // 32
constexpr size_t kFfnDim = 1024;

struct EncoderLayerParams {
  Tensor wq, bq, wk, bk, wv, bv;  // [256x256], [256]
  Tensor wo, bo;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1;  // [256x1024], [1024]
  Tensor ffn_w2, ffn_b2;  // [1024x256], [256]
};

struct EncoderParams {
  std::vector<EncoderLayerParams> layers;  // kEncLayers of them
};

inline EncoderParams make_encoder_params(Rng& rng) {
  EncoderParams p;
  p.layers.resize(kEncLayers);
  for (auto& l : p.layers) {
    l.wq = uniform_init({kTokenDim, kTokenDim}, kTokenDim, rng);
    l.bq = Tensor({kTokenDim});
    l.wk = uniform_init({kTokenDim, kTokenDim}, kTokenDim, rng);
    l.bk = Tensor({kTokenDim});
    l.wv = uniform_init({kTokenDim, kTokenDim}, kTokenDim, rng);
    l.bv = Tensor({kTokenDim});
    l.wo = uniform_init({kTokenDim, kTokenDim}, kTokenDim, rng);
    l.bo = Tensor({kTokenDim});
    l.ln1_g = Tensor({kTokenDim}, 1.0);
    l.ln1_b = Tensor({kTokenDim});
    l.ln2_g = Tensor({kTokenDim}, 1.0);
    l.ln2_b = Tensor({kTokenDim});
    l.ffn_w1 = uniform_init({kTokenDim, kFfnDim}, kTokenDim, rng);
    l.ffn_b1 = Tensor({kFfnDim});
    l.ffn_w2 = uniform_init({kFfnDim, kTokenDim}, kFfnDim, rng);
    l.ffn_b2 = Tensor({kTokenDim});
  }
  return p;
}

// Fixed 2-d sinusoidal positional table for a grid x grid token layout:
// 128 dims encode the row index, 128 the column index.
inline const Tensor& positional_encoding(size_t grid) {
  static std::mutex mu;
  static std::map<size_t, Tensor> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(grid);
  if (it != cache.end()) return it->second;
  const size_t half = kTokenDim / 2;       // per-axis budget
  const size_t pairs = half / 2;           // (sin, cos) pairs per axis
  Tensor pe({grid * grid, kTokenDim});
  for (size_t r = 0; r < grid; ++r)
    for (size_t c = 0; c < grid; ++c) {
      double* row = pe.data() + (r * grid + c) * kTokenDim;
      for (size_t k = 0; k < pairs; ++k) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) /
                                                   static_cast<double>(half));
        row[2 * k] = std::sin(static_cast<double>(r) * freq);
        row[2 * k + 1] = std::cos(static_cast<double>(r) * freq);
        row[half + 2 * k] = std::sin(static_cast<double>(c) * freq);
        row[half + 2 * k + 1] = std::cos(static_cast<double>(c) * freq);
      }
    }
  return cache.emplace(grid, std::move(pe)).first->second;
}

// optional inspection hook: collects every attention matrix of a forward pass
struct AttnProbe {
  std::vector<Tensor> attention;  // one [N x N] entry per (layer, head)
};

// Pre-layernorm transformer encoder; positional encoding is added once
// before the first layer.
inline Tensor encode_branch(Graph& g, const Tensor& tokens, const EncoderParams& p, size_t grid,
                            AttnProbe* probe = nullptr) {
  if (tokens.ndim() != 2 || tokens.shape()[1] != kTokenDim)
    throw DimensionError("encode_branch: tokens must be [N x 256]");
  if (tokens.shape()[0] != grid * grid)
    throw DimensionError("encode_branch: token count does not match the grid");
  using namespace ff::ops;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(kHeadDim));
  Tensor x = add(g, tokens, positional_encoding(grid));
  for (const EncoderLayerParams& l : p.layers) {
    Tensor h = layernorm_rows(g, x, l.ln1_g, l.ln1_b);
    Tensor q = linear(g, h, l.wq, l.bq);
    Tensor k = linear(g, h, l.wk, l.bk);
    Tensor v = linear(g, h, l.wv, l.bv);
    std::vector<Tensor> heads;
    heads.reserve(kEncHeads);
    for (size_t hd = 0; hd < kEncHeads; ++hd) {
      const size_t c0 = hd * kHeadDim, c1 = c0 + kHeadDim;
      Tensor qh = slice_last(g, q, c0, c1);
      Tensor kh = slice_last(g, k, c0, c1);
      Tensor vh = slice_last(g, v, c0, c1);
      Tensor attn = softmax_rows(g, scale(g, matmul_nt(g, qh, kh), inv_sqrt_d));
      if (probe) probe->attention.push_back(attn);
      heads.push_back(matmul(g, attn, vh));
    }
    Tensor attn_out = linear(g, concat_last(g, heads), l.wo, l.bo);
    x = add(g, x, attn_out);
    Tensor h2 = layernorm_rows(g, x, l.ln2_g, l.ln2_b);
    Tensor ffn = linear(g, gelu(g, linear(g, h2, l.ffn_w1, l.ffn_b1)), l.ffn_w2, l.ffn_b2);
    x = add(g, x, ffn);
  }
  return x;
}

}  // namespace ff
