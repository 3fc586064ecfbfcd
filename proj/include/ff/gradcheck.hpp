#pragma once

#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "ff/branch_low.hpp"
#include "ff/branch_mid.hpp"
#include "ff/encoder.hpp"
#include "ff/fusion.hpp"
#include "ff/model.hpp"

namespace ff {

struct PrimitiveCheck {
  std::string name;
  std::function<double(uint64_t)> run;  // seed -> max relative error
};

namespace detail_gc {

inline Tensor rand_t(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// scalarize an arbitrary op output: sum of squares keeps every coordinate live
inline Tensor sq_sum(Graph& g, const Tensor& t) {
  return ff::ops::sum_all(g, ff::ops::mul(g, t, t));
}

}  // namespace detail_gc

// One entry per differentiable primitive; each check runs central finite
// differences against the recorded backward rule on small random tensors.
inline std::vector<PrimitiveCheck> gradcheck_registry() {
  using namespace ff::ops;
  using detail_gc::rand_t;
  using detail_gc::sq_sum;
  std::vector<PrimitiveCheck> reg;
  auto add_check = [&](const std::string& name,
                       std::function<Tensor(Graph&, const Tensor&)> f, Shape shape,
                       double lo = -1.0, double hi = 1.0, double h = 1e-6) {
    reg.push_back({name, [=](uint64_t seed) {
                     Tensor x = rand_t(shape, derive_seed(seed, fnv1a64(name.data(), name.size())),
                                       lo, hi);
                     return finite_diff_check(f, x, h, 0, seed);
                   }});
  };

  add_check("add", [](Graph& g, const Tensor& x) {
    Tensor other = detail_gc::rand_t(x.shape(), 7);
    return sq_sum(g, add(g, x, other));
  }, {3, 4});
  add_check("sub", [](Graph& g, const Tensor& x) {
    Tensor other = detail_gc::rand_t(x.shape(), 8);
    return sq_sum(g, sub(g, x, other));
  }, {3, 4});
  add_check("mul", [](Graph& g, const Tensor& x) {
    Tensor other = detail_gc::rand_t(x.shape(), 9);
    return sq_sum(g, mul(g, x, other));
  }, {3, 4});
  add_check("div", [](Graph& g, const Tensor& x) {
    Tensor other = detail_gc::rand_t(x.shape(), 10, 0.5, 1.5);
    return sq_sum(g, div(g, x, other));
  }, {3, 4});
  add_check("scale", [](Graph& g, const Tensor& x) { return sq_sum(g, scale(g, x, -1.7)); },
            {3, 4});
  add_check("add_const",
            [](Graph& g, const Tensor& x) { return sq_sum(g, add_const(g, x, 0.4)); }, {3, 4});
  add_check("relu", [](Graph& g, const Tensor& x) { return sq_sum(g, relu(g, x)); }, {4, 5});
  add_check("gelu", [](Graph& g, const Tensor& x) { return sq_sum(g, gelu(g, x)); }, {4, 5});
  add_check("sigmoid", [](Graph& g, const Tensor& x) { return sq_sum(g, sigmoid(g, x)); },
            {4, 5});
  add_check("exp", [](Graph& g, const Tensor& x) { return sq_sum(g, vexp(g, x)); }, {4, 5});
  add_check("log", [](Graph& g, const Tensor& x) { return sq_sum(g, vlog(g, x)); }, {4, 5}, 0.3,
            2.0);
  add_check("sqrt", [](Graph& g, const Tensor& x) { return sq_sum(g, vsqrt(g, x)); }, {4, 5},
            0.3, 2.0);
  add_check("abs", [](Graph& g, const Tensor& x) { return sq_sum(g, vabs(g, x)); }, {4, 5}, 0.2,
            1.0);
  add_check("matmul", [](Graph& g, const Tensor& x) {
    Tensor other = detail_gc::rand_t({4, 5}, 11);
    return sq_sum(g, matmul(g, x, other));
  }, {3, 4});
  add_check("matmul_nt", [](Graph& g, const Tensor& x) {
    Tensor other = detail_gc::rand_t({6, 4}, 12);
    return sq_sum(g, matmul_nt(g, x, other));
  }, {3, 4});
  add_check("add_rowvec", [](Graph& g, const Tensor& x) {
    Tensor v = detail_gc::rand_t({4}, 13);
    return sq_sum(g, add_rowvec(g, x, v));
  }, {3, 4});
  add_check("softmax_rows",
            [](Graph& g, const Tensor& x) { return sq_sum(g, softmax_rows(g, x)); }, {3, 6});
  add_check("layernorm", [](Graph& g, const Tensor& x) {
    Tensor gamma = detail_gc::rand_t({6}, 14, 0.5, 1.5);
    Tensor beta = detail_gc::rand_t({6}, 15, -0.3, 0.3);
    return sq_sum(g, layernorm_rows(g, x, gamma, beta));
  }, {3, 6});
  add_check("sum_all", [](Graph& g, const Tensor& x) {
    Tensor s = sum_all(g, x);
    return mul(g, s, s);
  }, {3, 4});
  add_check("mean_all", [](Graph& g, const Tensor& x) {
    Tensor s = mean_all(g, x);
    return mul(g, s, s);
  }, {3, 4});
  add_check("mean_rows", [](Graph& g, const Tensor& x) { return sq_sum(g, mean_rows(g, x)); },
            {5, 4});
  add_check("max_all", [](Graph& g, const Tensor& x) {
    Tensor s = max_all(g, x);
    return mul(g, s, s);
  }, {4, 4}, 0.1, 3.0);
  add_check("div_scalar", [](Graph& g, const Tensor& x) {
    Tensor s = add_const(g, max_all(g, x), 0.5);
    return sq_sum(g, div_scalar(g, x, s));
  }, {4, 4}, 0.1, 2.0);
  add_check("reshape",
            [](Graph& g, const Tensor& x) { return sq_sum(g, reshape(g, x, {4, 3})); }, {3, 4});
  add_check("concat_last", [](Graph& g, const Tensor& x) {
    Tensor other = detail_gc::rand_t({3, 2}, 16);
    return sq_sum(g, concat_last(g, {x, other}));
  }, {3, 4});
  add_check("slice_last",
            [](Graph& g, const Tensor& x) { return sq_sum(g, slice_last(g, x, 1, 3)); }, {3, 4});
  add_check("pick", [](Graph& g, const Tensor& x) {
    Tensor s = pick(g, x, 5);
    return mul(g, s, s);
  }, {3, 4});
  add_check("conv2d_same", [](Graph& g, const Tensor& x) {
    Tensor k = detail_gc::rand_t({3, 3, 2, 3}, 17, -0.5, 0.5);
    return sq_sum(g, conv2d(g, x, k, Pad::Same));
  }, {5, 6, 2});
  add_check("conv2d_valid", [](Graph& g, const Tensor& x) {
    Tensor k = detail_gc::rand_t({3, 3, 2, 3}, 18, -0.5, 0.5);
    return sq_sum(g, conv2d(g, x, k, Pad::Valid));
  }, {5, 6, 2});
  add_check("conv2d_kernel", [](Graph& g, const Tensor& x) {
    Tensor in = detail_gc::rand_t({5, 6, 2}, 19);
    return sq_sum(g, conv2d(g, in, x, Pad::Same));
  }, {3, 3, 2, 3});
  add_check("bilinear_resize_up",
            [](Graph& g, const Tensor& x) { return sq_sum(g, bilinear_resize(g, x, 7, 9)); },
            {4, 5, 2});
  add_check("bilinear_resize_down",
            [](Graph& g, const Tensor& x) { return sq_sum(g, bilinear_resize(g, x, 3, 3)); },
            {7, 8, 2});
  add_check("window_max", [](Graph& g, const Tensor& x) {
    return sq_sum(g, window_max(g, x, 1));
  }, {6, 6}, 0.0, 3.0, 1e-7);
  add_check("bce_with_logits", [](Graph& g, const Tensor& x) {
    Tensor target({3, 4});
    for (size_t i = 0; i < target.size(); ++i) target[i] = i % 2 ? 1.0 : 0.0;
    Tensor l = bce_with_logits_mean(g, x, target);
    return mul(g, l, l);
  }, {3, 4});
  add_check("ce_from_logits", [](Graph& g, const Tensor& x) {
    Tensor l = ce_from_logits(g, x, 2);
    return mul(g, l, l);
  }, {7});
  add_check("block_dct", [](Graph& g, const Tensor& x) {
    return sq_sum(g, ff::ops::block_dct_grid(g, x));
  }, {8, 8}, 0.0, 1.0);
  add_check("haar_highbands", [](Graph& g, const Tensor& x) {
    return sq_sum(g, ff::ops::haar_highbands(g, x));
  }, {6, 6}, 0.0, 1.0);
  add_check("rgb_to_gray", [](Graph& g, const Tensor& x) {
    return sq_sum(g, ff::ops::rgb_to_gray(g, x));
  }, {5, 5, 3}, 0.0, 1.0);
  add_check("blur_clamp", [](Graph& g, const Tensor& x) {
    return sq_sum(g, ff::ops::blur_clamp(g, x, 0.8));
  }, {7, 7}, 0.0, 1.0);
  add_check("sobel_pair", [](Graph& g, const Tensor& x) {
    return sq_sum(g, ff::ops::sobel_pair(g, x));
  }, {7, 7}, 0.0, 1.0);
  add_check("laplacian5", [](Graph& g, const Tensor& x) {
    return sq_sum(g, ff::ops::laplacian5(g, x));
  }, {7, 7}, 0.0, 1.0);
  return reg;
}

// End-to-end check at the reference token geometry: three 64-token branch
// inputs through their encoders, cross-attention fusion, all heads and the
// composite loss. Checks the three token inputs and a sample of parameters
// against central differences.
inline double gradcheck_model_end_to_end(uint64_t seed, size_t coords_per_tensor = 12) {
  // step size tuned for the end-to-end loss scale: central differences at
  // 1e-4 sit ~100x under the 1e-5 gate, 1e-5 is dominated by f64 noise on
  // small-gradient coordinates
  constexpr double kH = 1e-4;
  ModelConfig cfg;
  cfg.image_size = 64;
  Model m = Model::init(cfg, seed);
  const size_t grid = cfg.grid();
  Tensor t_low = detail_gc::rand_t({grid * grid, kTokenDim}, derive_seed(seed, 1));
  Tensor t_mid = detail_gc::rand_t({grid * grid, kTokenDim}, derive_seed(seed, 2));
  Tensor t_high = detail_gc::rand_t({grid * grid, kTokenDim}, derive_seed(seed, 3));
  Tensor mask({cfg.image_size, cfg.image_size, 1});
  Rng mrng(derive_seed(seed, 4));
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = mrng.uniform() < 0.25 ? 1.0 : 0.0;

  auto loss_with = [&](Graph& g, const Tensor& a, const Tensor& b, const Tensor& c) {
    Tensor h_low = encode_branch(g, a, m.enc_low, grid);
    Tensor h_mid = encode_branch(g, b, m.enc_mid, grid);
    Tensor h_high = encode_branch(g, c, m.enc_high, grid);
    Tensor fused = fuse(g, h_low, h_mid, h_high, m.fusion, m.cfg.fusion);
    ModelOutputs out = heads_forward(g, fused, m.heads, grid, cfg.image_size, cfg.image_size);
    return total_loss(g, out, mask, 1, 2, m.cfg.loss_weights).total;
  };

  double worst = 0.0;
  auto check_input = [&](Tensor& which, int tag) {
    auto f = [&](Graph& g, const Tensor& x) {
      const Tensor& a = (tag == 0) ? x : t_low;
      const Tensor& b = (tag == 1) ? x : t_mid;
      const Tensor& c = (tag == 2) ? x : t_high;
      return loss_with(g, a, b, c);
    };
    worst = std::max(worst, finite_diff_check(f, which, kH, coords_per_tensor,
                                              derive_seed(seed, 0xc0 + static_cast<uint64_t>(tag))));
  };
  check_input(t_low, 0);
  check_input(t_mid, 1);
  check_input(t_high, 2);

  // representative parameters across the depth of the network
  const char* picks[] = {"enc.low.l0.wq",  "enc.low.l3.ffn_w2", "enc.mid.l1.wv",
                         "enc.high.l2.wo", "enc.mid.l2.ln1_g",  "heads.cls_w",
                         "heads.mask_w",   "heads.type_w"};
  for (const char* pname : picks) {
    Tensor* param = nullptr;
    for (auto& [name, t] : m.named)
      if (name == pname) param = &t;
    if (!param) throw ContractError(std::string("gradcheck: unknown parameter ") + pname);
    // the probe shares storage with the live parameter, so the perturbation
    // sweep and the recorded backward act on the same tensor
    auto f = [&](Graph& g, const Tensor&) { return loss_with(g, t_low, t_mid, t_high); };
    param->zero_grad();
    worst = std::max(
        worst, finite_diff_check(f, *param, kH, coords_per_tensor,
                                 derive_seed(seed, fnv1a64(pname, std::strlen(pname)))));
  }
  return worst;
}

}  // namespace ff
