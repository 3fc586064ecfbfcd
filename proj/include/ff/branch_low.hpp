#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "ff/error.hpp"
#include "ff/image.hpp"
#include "ff/srm.hpp"
#include "ff/tensor.hpp"

namespace ff {

// ---------------------------------------------------------------------------
// block DCT, implemented literally as the unnormalized double cosine sum
// D_{u,v} = sum_{x,y} I_{x,y} cos(pi u (2x+1)/16) cos(pi v (2y+1)/16).
// The network consumes these coefficients as features; the JPEG simulator
// keeps its own orthonormal transform.
// ---------------------------------------------------------------------------

namespace detail_dct {

// rows index frequency u, columns index position x
inline const std::array<double, 64>& cos_basis() {
  static const std::array<double, 64> b = [] {
    std::array<double, 64> m{};
    const double pi = 3.14159265358979323846;
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        m[static_cast<size_t>(u * 8 + x)] = std::cos(pi * u * (2.0 * x + 1.0) / 16.0);
    return m;
  }();
  return b;
}

// D = B X B^T
inline void forward8(const double* x, double* d) {
  const auto& b = cos_basis();
  double t[64];
  for (int u = 0; u < 8; ++u)
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += b[static_cast<size_t>(u * 8 + k)] * x[k * 8 + j];
      t[u * 8 + j] = acc;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) acc += t[u * 8 + k] * b[static_cast<size_t>(v * 8 + k)];
      d[u * 8 + v] = acc;
    }
}

// adjoint: dX = B^T dD B
inline void adjoint8(const double* d, double* x) {
  const auto& b = cos_basis();
  double t[64];
  for (int i = 0; i < 8; ++i)
    for (int v = 0; v < 8; ++v) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u) acc += b[static_cast<size_t>(u * 8 + i)] * d[u * 8 + v];
      t[i * 8 + v] = acc;
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int v = 0; v < 8; ++v) acc += t[i * 8 + v] * b[static_cast<size_t>(v * 8 + j)];
      x[i * 8 + j] = acc;
    }
}

}  // namespace detail_dct

// One 8x8 coefficient block per image block, channel index u*8+v.
struct DctBlockGrid {
  size_t blocks_y = 0;
  size_t blocks_x = 0;
  std::vector<double> coeffs;  // blocks_y * blocks_x * 64

  const double* block(size_t by, size_t bx) const {
    return coeffs.data() + (by * blocks_x + bx) * 64;
  }
};

inline DctBlockGrid block_dct(const ImagePlane& gray) {
  if (gray.height % 8 != 0 || gray.width % 8 != 0)
    throw DimensionError("block_dct: dimensions must be multiples of 8");
  DctBlockGrid grid;
  grid.blocks_y = gray.height / 8;
  grid.blocks_x = gray.width / 8;
  grid.coeffs.resize(grid.blocks_y * grid.blocks_x * 64);
  double blk[64];
  for (size_t by = 0; by < grid.blocks_y; ++by)
    for (size_t bx = 0; bx < grid.blocks_x; ++bx) {
      for (size_t y = 0; y < 8; ++y)
        for (size_t x = 0; x < 8; ++x) blk[y * 8 + x] = gray.at(bx * 8 + x, by * 8 + y);
      detail_dct::forward8(blk, grid.coeffs.data() + (by * grid.blocks_x + bx) * 64);
    }
  return grid;
}

// matching inverse using the standard DCT-II weights 1/8 (u=0) and 1/4;
// recovers the block values of the literal forward transform
inline void block_dct_inverse(const double* coeffs, double* block) {
  const auto& b = detail_dct::cos_basis();
  auto alpha2 = [](int u) { return u == 0 ? 1.0 / 8.0 : 1.0 / 4.0; };
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v)
          acc += alpha2(u) * alpha2(v) * b[static_cast<size_t>(u * 8 + x)] *
                 b[static_cast<size_t>(v * 8 + y)] * coeffs[u * 8 + v];
      block[x * 8 + y] = acc;
    }
}

// ---------------------------------------------------------------------------
// one-level Haar decomposition with 1/2 normalization per 2x2 cell
// ---------------------------------------------------------------------------

struct HaarSubbands {
  ImagePlane ll, lh, hl, hh;
};

inline HaarSubbands haar_dwt(const ImagePlane& gray) {
  if (gray.height % 2 != 0 || gray.width % 2 != 0)
    throw DimensionError("haar_dwt: dimensions must be even");
  const size_t oh = gray.height / 2, ow = gray.width / 2;
  HaarSubbands s{ImagePlane(ow, oh), ImagePlane(ow, oh), ImagePlane(ow, oh), ImagePlane(ow, oh)};
  for (size_t y = 0; y < oh; ++y)
    for (size_t x = 0; x < ow; ++x) {
      const double a = gray.at(2 * x, 2 * y);
      const double b = gray.at(2 * x + 1, 2 * y);
      const double c = gray.at(2 * x, 2 * y + 1);
      const double d = gray.at(2 * x + 1, 2 * y + 1);
      s.ll.at(x, y) = (a + b + c + d) / 2.0;
      s.lh.at(x, y) = (a - b + c - d) / 2.0;
      s.hl.at(x, y) = (a + b - c - d) / 2.0;
      s.hh.at(x, y) = (a - b - c + d) / 2.0;
    }
  return s;
}

// exact inverse of haar_dwt (test hook; the branch discards LL)
inline ImagePlane haar_reconstruct(const HaarSubbands& s) {
  const size_t oh = s.ll.height, ow = s.ll.width;
  ImagePlane out(ow * 2, oh * 2);
  for (size_t y = 0; y < oh; ++y)
    for (size_t x = 0; x < ow; ++x) {
      const double ll = s.ll.at(x, y), lh = s.lh.at(x, y), hl = s.hl.at(x, y), hh = s.hh.at(x, y);
      out.at(2 * x, 2 * y) = (ll + lh + hl + hh) / 2.0;
      out.at(2 * x + 1, 2 * y) = (ll - lh + hl - hh) / 2.0;
      out.at(2 * x, 2 * y + 1) = (ll + lh - hl - hh) / 2.0;
      out.at(2 * x + 1, 2 * y + 1) = (ll - lh - hl + hh) / 2.0;
    }
  return out;
}

inline double mean_abs(const ImagePlane& p) {
  double s = 0.0;
  for (double v : p.values) s += std::fabs(v);
  return s / static_cast<double>(p.values.size());
}

// ---------------------------------------------------------------------------
// graph ops (differentiable paths from the image into the branch)
// ---------------------------------------------------------------------------
namespace ops {

using ff::ops::track_any;

// [H x W] -> [H/8 x W/8 x 64], channel index u*8+v
inline Tensor block_dct_grid(Graph& g, const Tensor& gray) {
  if (gray.ndim() != 2) throw DimensionError("block_dct_grid expects [H x W]");
  const size_t H = gray.shape()[0], W = gray.shape()[1];
  if (H % 8 != 0 || W % 8 != 0)
    throw DimensionError("block_dct_grid: dimensions must be multiples of 8");
  const size_t bh = H / 8, bw = W / 8;
  Tensor y({bh, bw, 64});
  double blk[64];
  for (size_t by = 0; by < bh; ++by)
    for (size_t bx = 0; bx < bw; ++bx) {
      for (size_t r = 0; r < 8; ++r)
        for (size_t c = 0; c < 8; ++c) blk[r * 8 + c] = gray[(by * 8 + r) * W + bx * 8 + c];
      detail_dct::forward8(blk, y.data() + (by * bw + bx) * 64);
    }
  if (track_any(g, {&gray})) {
    g.mark_output(y);
    auto xd = gray.handle(), yd = y.handle();
    g.record("block_dct", [&g, xd, yd, H, W, bh, bw]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* gx = g.grad_slot(xd);
      if (!gx) return;
      double blk[64];
      for (size_t by = 0; by < bh; ++by)
        for (size_t bx = 0; bx < bw; ++bx) {
          detail_dct::adjoint8(gy + (by * bw + bx) * 64, blk);
          for (size_t r = 0; r < 8; ++r)
            for (size_t c = 0; c < 8; ++c) gx[(by * 8 + r) * W + bx * 8 + c] += blk[r * 8 + c];
        }
    });
  }
  return y;
}

// [H x W] -> [H/2 x W/2 x 3] (LH, HL, HH), LL discarded
inline Tensor haar_highbands(Graph& g, const Tensor& gray) {
  if (gray.ndim() != 2) throw DimensionError("haar_highbands expects [H x W]");
  const size_t H = gray.shape()[0], W = gray.shape()[1];
  if (H % 2 != 0 || W % 2 != 0) throw DimensionError("haar_highbands: dimensions must be even");
  const size_t oh = H / 2, ow = W / 2;
  Tensor y({oh, ow, 3});
  for (size_t r = 0; r < oh; ++r)
    for (size_t c = 0; c < ow; ++c) {
      const double a = gray[(2 * r) * W + 2 * c];
      const double b = gray[(2 * r) * W + 2 * c + 1];
      const double cc = gray[(2 * r + 1) * W + 2 * c];
      const double d = gray[(2 * r + 1) * W + 2 * c + 1];
      double* out = y.data() + (r * ow + c) * 3;
      out[0] = (a - b + cc - d) / 2.0;
      out[1] = (a + b - cc - d) / 2.0;
      out[2] = (a - b - cc + d) / 2.0;
    }
  if (track_any(g, {&gray})) {
    g.mark_output(y);
    auto xd = gray.handle(), yd = y.handle();
    g.record("haar_highbands", [&g, xd, yd, W, oh, ow]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* gx = g.grad_slot(xd);
      if (!gx) return;
      for (size_t r = 0; r < oh; ++r)
        for (size_t c = 0; c < ow; ++c) {
          const double glh = gy[(r * ow + c) * 3];
          const double ghl = gy[(r * ow + c) * 3 + 1];
          const double ghh = gy[(r * ow + c) * 3 + 2];
          gx[(2 * r) * W + 2 * c] += (glh + ghl + ghh) / 2.0;
          gx[(2 * r) * W + 2 * c + 1] += (-glh + ghl - ghh) / 2.0;
          gx[(2 * r + 1) * W + 2 * c] += (glh - ghl - ghh) / 2.0;
          gx[(2 * r + 1) * W + 2 * c + 1] += (-glh - ghl + ghh) / 2.0;
        }
    });
  }
  return y;
}

}  // namespace ops

// SRM residual planes for an image: 30 same-padded convolutions of the
// grayscale plane (one output plane per filter; see module docs for why
// grayscale rather than per-channel).
inline Tensor srm_residuals(const ImageRGB& img) {
  Graph g;
  g.set_recording(false);
  ImagePlane gray = to_gray(img);
  Tensor gt = Tensor::from({gray.height, gray.width, 1}, gray.values);
  return ff::ops::conv2d(g, gt, srm_kernel_tensor(), ff::ops::Pad::Same);
}

// ---------------------------------------------------------------------------
// learned branch head: three stem convolutions, common-grid resample,
// linear projection to 256-d tokens
// ---------------------------------------------------------------------------

constexpr size_t kLowStemDct = 64;
constexpr size_t kLowStemDwt = 16;
constexpr size_t kLowStemSrm = 32;

struct LowBranchParams {
  Tensor conv_dct, bias_dct;  // [3x3x64x64], [64]
  Tensor conv_dwt, bias_dwt;  // [3x3x3x16],  [16]
  Tensor conv_srm, bias_srm;  // [3x3x30x32], [32]
  Tensor proj_w, proj_b;      // [112x256],   [256]
};

// fixed (parameter-free) transforms of one image; cacheable across epochs
struct LowFeatures {
  Tensor dct;  // [H/8 x W/8 x 64]
  Tensor dwt;  // [H/2 x W/2 x 3]
  Tensor srm;  // [H x W x 30]
};

// `img` is an [H x W x 3] tensor in [0,1]; gradients flow back into it when
// it is marked requires_grad (the FGSM path).
inline LowFeatures compute_low_features(Graph& g, const Tensor& img) {
  LowFeatures f;
  Tensor gray = ops::rgb_to_gray(g, img);
  f.dct = ops::block_dct_grid(g, gray);
  f.dwt = ops::haar_highbands(g, gray);
  const size_t H = gray.shape()[0], W = gray.shape()[1];
  Tensor gray3 = ff::ops::reshape(g, gray, {H, W, 1});
  f.srm = ff::ops::conv2d(g, gray3, srm_kernel_tensor(), ff::ops::Pad::Same);
  return f;
}

namespace detail_low {

// conv stem + per-channel bias, staying in [h x w x C] layout
inline Tensor stem(Graph& g, const Tensor& x, const Tensor& k, const Tensor& b) {
  Tensor c = ff::ops::conv2d(g, x, k, ff::ops::Pad::Same);
  const size_t h = c.shape()[0], w = c.shape()[1], ch = c.shape()[2];
  Tensor flat = ff::ops::reshape(g, c, {h * w, ch});
  Tensor biased = ff::ops::add_rowvec(g, flat, b);
  return ff::ops::reshape(g, biased, {h, w, ch});
}

}  // namespace detail_low

inline LowBranchParams make_low_params(Rng& rng) {
  LowBranchParams p;
  p.conv_dct = uniform_init({3, 3, 64, kLowStemDct}, 3 * 3 * 64, rng);
  p.bias_dct = Tensor({kLowStemDct});
  p.conv_dwt = uniform_init({3, 3, 3, kLowStemDwt}, 3 * 3 * 3, rng);
  p.bias_dwt = Tensor({kLowStemDwt});
  p.conv_srm = uniform_init({3, 3, 30, kLowStemSrm}, 3 * 3 * 30, rng);
  p.bias_srm = Tensor({kLowStemSrm});
  const size_t cat = kLowStemDct + kLowStemDwt + kLowStemSrm;
  p.proj_w = uniform_init({cat, kTokenDim}, cat, rng);
  p.proj_b = Tensor({kTokenDim});
  return p;
}

// tokens [G*G x 256]
inline Tensor low_branch_forward(Graph& g, const LowFeatures& f, const LowBranchParams& p,
                                 size_t grid) {
  Tensor fd = detail_low::stem(g, f.dct, p.conv_dct, p.bias_dct);
  Tensor fw = detail_low::stem(g, f.dwt, p.conv_dwt, p.bias_dwt);
  Tensor fs = detail_low::stem(g, f.srm, p.conv_srm, p.bias_srm);
  fd = ff::ops::bilinear_resize(g, fd, grid, grid);
  fw = ff::ops::bilinear_resize(g, fw, grid, grid);
  fs = ff::ops::bilinear_resize(g, fs, grid, grid);
  Tensor cat = ff::ops::concat_last(g, {fd, fw, fs});
  Tensor flat = ff::ops::reshape(g, cat, {grid * grid, kLowStemDct + kLowStemDwt + kLowStemSrm});
  return ff::ops::linear(g, flat, p.proj_w, p.proj_b);
}

}  // namespace ff
