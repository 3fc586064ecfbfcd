#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "ff/error.hpp"
#include "ff/image.hpp"
#include "ff/rng.hpp"
#include "ff/tensor.hpp"

namespace ff {

// ---------------------------------------------------------------------------
// graph ops with clamp-to-edge borders, shared by the plane-level operators
// so the differentiable path and the cached path compute identical values
// ---------------------------------------------------------------------------
namespace ops {

// separable Gaussian blur on [H x W], clamp-to-edge
inline Tensor blur_clamp(Graph& g, const Tensor& x, double sigma) {
  if (x.ndim() != 2) throw DimensionError("blur_clamp expects [H x W]");
  const auto kern = gaussian_kernel(sigma);
  const long r = static_cast<long>(kern.size() / 2);
  const size_t H = x.shape()[0], W = x.shape()[1];
  Tensor y({H, W});
  std::vector<double> tmp(H * W);
  for (size_t yy = 0; yy < H; ++yy)
    for (size_t xx = 0; xx < W; ++xx) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) {
        const long c = std::clamp<long>(static_cast<long>(xx) + i, 0, static_cast<long>(W) - 1);
        acc += kern[static_cast<size_t>(i + r)] * x[yy * W + static_cast<size_t>(c)];
      }
      tmp[yy * W + xx] = acc;
    }
  for (size_t yy = 0; yy < H; ++yy)
    for (size_t xx = 0; xx < W; ++xx) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) {
        const long c = std::clamp<long>(static_cast<long>(yy) + i, 0, static_cast<long>(H) - 1);
        acc += kern[static_cast<size_t>(i + r)] * tmp[static_cast<size_t>(c) * W + xx];
      }
      y[yy * W + xx] = acc;
    }
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    auto kv = std::make_shared<std::vector<double>>(kern);
    g.record("blur_clamp", [&g, xd, yd, kv, H, W, r]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* gx = g.grad_slot(xd);
      if (!gx) return;
      // adjoint: scatter through the same clamped taps, pass by pass
      std::vector<double> tmp(H * W, 0.0);
      for (size_t yy = 0; yy < H; ++yy)
        for (size_t xx = 0; xx < W; ++xx) {
          const double go = gy[yy * W + xx];
          for (long i = -r; i <= r; ++i) {
            const long c = std::clamp<long>(static_cast<long>(yy) + i, 0, static_cast<long>(H) - 1);
            tmp[static_cast<size_t>(c) * W + xx] += (*kv)[static_cast<size_t>(i + r)] * go;
          }
        }
      for (size_t yy = 0; yy < H; ++yy)
        for (size_t xx = 0; xx < W; ++xx) {
          const double go = tmp[yy * W + xx];
          if (go == 0.0) continue;
          for (long i = -r; i <= r; ++i) {
            const long c = std::clamp<long>(static_cast<long>(xx) + i, 0, static_cast<long>(W) - 1);
            gx[yy * W + static_cast<size_t>(c)] += (*kv)[static_cast<size_t>(i + r)] * go;
          }
        }
    });
  }
  return y;
}

namespace detail_mid {
constexpr double kSobelX[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
constexpr double kSobelY[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
}  // namespace detail_mid

// standard 3x3 Sobel pair on [H x W] -> [H x W x 2], clamp-to-edge
inline Tensor sobel_pair(Graph& g, const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("sobel_pair expects [H x W]");
  const size_t H = x.shape()[0], W = x.shape()[1];
  Tensor y({H, W, 2});
  auto sample = [&](long yy, long xx) {
    yy = std::clamp<long>(yy, 0, static_cast<long>(H) - 1);
    xx = std::clamp<long>(xx, 0, static_cast<long>(W) - 1);
    return x[static_cast<size_t>(yy) * W + static_cast<size_t>(xx)];
  };
  for (size_t yy = 0; yy < H; ++yy)
    for (size_t xx = 0; xx < W; ++xx) {
      double gx = 0.0, gyv = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const double v = sample(static_cast<long>(yy) + dy, static_cast<long>(xx) + dx);
          gx += detail_mid::kSobelX[(dy + 1) * 3 + dx + 1] * v;
          gyv += detail_mid::kSobelY[(dy + 1) * 3 + dx + 1] * v;
        }
      y[(yy * W + xx) * 2] = gx;
      y[(yy * W + xx) * 2 + 1] = gyv;
    }
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    g.record("sobel_pair", [&g, xd, yd, H, W]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* gx = g.grad_slot(xd);
      if (!gx) return;
      for (size_t yy = 0; yy < H; ++yy)
        for (size_t xx = 0; xx < W; ++xx) {
          const double gox = gy[(yy * W + xx) * 2];
          const double goy = gy[(yy * W + xx) * 2 + 1];
          if (gox == 0.0 && goy == 0.0) continue;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const long sy = std::clamp<long>(static_cast<long>(yy) + dy, 0, static_cast<long>(H) - 1);
              const long sx = std::clamp<long>(static_cast<long>(xx) + dx, 0, static_cast<long>(W) - 1);
              gx[static_cast<size_t>(sy) * W + static_cast<size_t>(sx)] +=
                  detail_mid::kSobelX[(dy + 1) * 3 + dx + 1] * gox +
                  detail_mid::kSobelY[(dy + 1) * 3 + dx + 1] * goy;
            }
        }
    });
  }
  return y;
}

// 5-point discrete Laplacian, clamp-to-edge
inline Tensor laplacian5(Graph& g, const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("laplacian5 expects [H x W]");
  const size_t H = x.shape()[0], W = x.shape()[1];
  Tensor y({H, W});
  auto idx = [&](long yy, long xx) {
    yy = std::clamp<long>(yy, 0, static_cast<long>(H) - 1);
    xx = std::clamp<long>(xx, 0, static_cast<long>(W) - 1);
    return static_cast<size_t>(yy) * W + static_cast<size_t>(xx);
  };
  for (size_t yy = 0; yy < H; ++yy)
    for (size_t xx = 0; xx < W; ++xx)
      y[yy * W + xx] = x[idx(yy - 1, xx)] + x[idx(yy + 1, xx)] + x[idx(yy, xx - 1)] +
                       x[idx(yy, xx + 1)] - 4.0 * x[yy * W + xx];
  if (track_any(g, {&x})) {
    g.mark_output(y);
    auto xd = x.handle(), yd = y.handle();
    g.record("laplacian5", [&g, xd, yd, H, W]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      double* gx = g.grad_slot(xd);
      if (!gx) return;
      auto idx = [&](long yy, long xx) {
        yy = std::clamp<long>(yy, 0, static_cast<long>(H) - 1);
        xx = std::clamp<long>(xx, 0, static_cast<long>(W) - 1);
        return static_cast<size_t>(yy) * W + static_cast<size_t>(xx);
      };
      for (size_t yy = 0; yy < H; ++yy)
        for (size_t xx = 0; xx < W; ++xx) {
          const double go = gy[yy * W + xx];
          if (go == 0.0) continue;
          gx[idx(yy - 1, xx)] += go;
          gx[idx(yy + 1, xx)] += go;
          gx[idx(yy, xx - 1)] += go;
          gx[idx(yy, xx + 1)] += go;
          gx[yy * W + xx] -= 4.0 * go;
        }
    });
  }
  return y;
}

}  // namespace ops

// ---------------------------------------------------------------------------
// plane-level edge operators
// ---------------------------------------------------------------------------

inline ImagePlane sobel(const ImagePlane& gray) {
  Graph g;
  g.set_recording(false);
  Tensor pair = ops::sobel_pair(g, plane_to_tensor(gray));
  ImagePlane mag(gray.width, gray.height);
  for (size_t i = 0; i < mag.values.size(); ++i) {
    const double gx = pair[2 * i], gy = pair[2 * i + 1];
    mag.values[i] = std::sqrt(gx * gx + gy * gy);
  }
  return mag;
}

inline ImagePlane log_filter(const ImagePlane& gray, double sigma) {
  if (sigma <= 0.0) throw ContractError("log_filter: sigma must be positive");
  Graph g;
  g.set_recording(false);
  Tensor smooth = ops::blur_clamp(g, plane_to_tensor(gray), sigma);
  return tensor_to_plane(ops::laplacian5(g, smooth));
}

struct EdgeMaps {
  ImagePlane canny;  // binary {0,1}
  ImagePlane sobel;  // magnitude >= 0
  ImagePlane log;    // signed
};

// blur, Sobel gradients, 4-direction non-maximum suppression, hysteresis
// flood fill from strong pixels; thresholds are on max-normalized magnitude
inline ImagePlane canny(const ImagePlane& gray, double sigma = 1.0, double t_low = 0.1,
                        double t_high = 0.3) {
  if (!(t_low > 0.0 && t_low < t_high && t_high < 1.0))
    throw ContractError("canny: need 0 < t_low < t_high < 1");
  const size_t W = gray.width, H = gray.height;
  Graph g;
  g.set_recording(false);
  Tensor smooth = ops::blur_clamp(g, plane_to_tensor(gray), sigma);
  Tensor pair = ops::sobel_pair(g, smooth);
  std::vector<double> mag(W * H), gx(W * H), gy(W * H);
  double max_mag = 0.0;
  for (size_t i = 0; i < W * H; ++i) {
    gx[i] = pair[2 * i];
    gy[i] = pair[2 * i + 1];
    mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    max_mag = std::max(max_mag, mag[i]);
  }
  ImagePlane edges(W, H, 0.0);
  if (max_mag == 0.0) return edges;
  for (double& m : mag) m /= max_mag;

  auto at = [&](long y, long x) {
    y = std::clamp<long>(y, 0, static_cast<long>(H) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(W) - 1);
    return mag[static_cast<size_t>(y) * W + static_cast<size_t>(x)];
  };
  // Non-maximum suppression: the gradient is quantized into the four
  // canonical sectors and the magnitude ahead/behind is interpolated
  // between that sector's two neighbours, which keeps ridges one pixel
  // wide on curved edges. 0: none, 1: weak, 2: strong.
  std::vector<uint8_t> cls(W * H, 0);
  for (size_t y = 0; y < H; ++y)
    for (size_t x = 0; x < W; ++x) {
      const size_t i = y * W + x;
      if (mag[i] < t_low) continue;
      const double ax = std::fabs(gx[i]), ay = std::fabs(gy[i]);
      const long yy = static_cast<long>(y), xx = static_cast<long>(x);
      const long sx = gx[i] >= 0.0 ? 1 : -1;
      const long sy = gy[i] >= 0.0 ? 1 : -1;
      double fwd, bwd;
      if (ax >= ay) {  // horizontal-leaning sector
        const double w = ax > 0.0 ? ay / ax : 0.0;
        fwd = at(yy, xx + sx) + w * (at(yy + sy, xx + sx) - at(yy, xx + sx));
        bwd = at(yy, xx - sx) + w * (at(yy - sy, xx - sx) - at(yy, xx - sx));
      } else {  // vertical-leaning sector
        const double w = ax / ay;
        fwd = at(yy + sy, xx) + w * (at(yy + sy, xx + sx) - at(yy + sy, xx));
        bwd = at(yy - sy, xx) + w * (at(yy - sy, xx - sx) - at(yy - sy, xx));
      }
      // asymmetric tie-break keeps exactly one pixel of a flat two-pixel ridge
      if (mag[i] > bwd && mag[i] >= fwd) cls[i] = mag[i] >= t_high ? 2 : 1;
    }
  // hysteresis: flood from strong pixels through weak ones (8-connected)
  std::deque<size_t> queue;
  for (size_t i = 0; i < cls.size(); ++i)
    if (cls[i] == 2) {
      edges.values[i] = 1.0;
      queue.push_back(i);
    }
  while (!queue.empty()) {
    const size_t i = queue.front();
    queue.pop_front();
    const long y = static_cast<long>(i / W), x = static_cast<long>(i % W);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const long ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= static_cast<long>(H) || nx < 0 || nx >= static_cast<long>(W)) continue;
        const size_t j = static_cast<size_t>(ny) * W + static_cast<size_t>(nx);
        if (cls[j] == 1 && edges.values[j] == 0.0) {
          edges.values[j] = 1.0;
          queue.push_back(j);
        }
      }
  }
  return edges;
}

inline EdgeMaps edge_maps(const ImagePlane& gray, double canny_sigma = 1.0,
                          double log_sigma = 1.0) {
  return {canny(gray, canny_sigma), sobel(gray), log_filter(gray, log_sigma)};
}

// ---------------------------------------------------------------------------
// segmentation fallback: k-means over (R, G, B, 0.5x, 0.5y)
// ---------------------------------------------------------------------------

struct SegmentMap {
  size_t width = 0, height = 0;
  int k = 0;
  std::vector<int> labels;
};

// img01: [H x W x 3] tensor with values in [0,1]
inline SegmentMap segment(const Tensor& img01, int k, uint64_t seed = 1,
                          double lambda_xy = 0.5, int max_iters = 50) {
  if (img01.ndim() != 3 || img01.shape()[2] != 3) throw DimensionError("segment expects [HxWx3]");
  if (k < 1 || k > 19) throw ContractError("segment: k must be in [1, 19]");
  const size_t H = img01.shape()[0], W = img01.shape()[1], n = H * W;
  SegmentMap seg{W, H, k, std::vector<int>(n, 0)};
  if (k == 1) return seg;

  const size_t dims = 5;
  std::vector<double> feat(n * dims);
  for (size_t y = 0; y < H; ++y)
    for (size_t x = 0; x < W; ++x) {
      double* f = feat.data() + (y * W + x) * dims;
      f[0] = img01[(y * W + x) * 3];
      f[1] = img01[(y * W + x) * 3 + 1];
      f[2] = img01[(y * W + x) * 3 + 2];
      f[3] = lambda_xy * (W > 1 ? static_cast<double>(x) / static_cast<double>(W - 1) : 0.0);
      f[4] = lambda_xy * (H > 1 ? static_cast<double>(y) / static_cast<double>(H - 1) : 0.0);
    }
  auto dist2 = [&](const double* a, const double* b) {
    double s = 0.0;
    for (size_t d = 0; d < dims; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
    return s;
  };
  // farthest-first init from a seeded start pixel (ties -> lowest index)
  std::vector<double> centers(static_cast<size_t>(k) * dims);
  Rng rng(derive_seed(seed, 0x5e6));
  const size_t first = static_cast<size_t>(rng.below(n));
  std::copy_n(feat.data() + first * dims, dims, centers.data());
  std::vector<double> min_d(n);
  for (size_t i = 0; i < n; ++i) min_d[i] = dist2(feat.data() + i * dims, centers.data());
  for (int c = 1; c < k; ++c) {
    size_t far_i = 0;
    double far_d = -1.0;
    for (size_t i = 0; i < n; ++i)
      if (min_d[i] > far_d) {
        far_d = min_d[i];
        far_i = i;
      }
    std::copy_n(feat.data() + far_i * dims, dims, centers.data() + static_cast<size_t>(c) * dims);
    for (size_t i = 0; i < n; ++i)
      min_d[i] = std::min(min_d[i], dist2(feat.data() + i * dims,
                                          centers.data() + static_cast<size_t>(c) * dims));
  }

  std::vector<double> sums(static_cast<size_t>(k) * dims);
  std::vector<size_t> counts(static_cast<size_t>(k));
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = dist2(feat.data() + i * dims, centers.data());
      for (int c = 1; c < k; ++c) {
        const double d = dist2(feat.data() + i * dims, centers.data() + static_cast<size_t>(c) * dims);
        if (d < best_d) {  // strict: ties keep the lowest cluster index
          best_d = d;
          best = c;
        }
      }
      if (seg.labels[i] != best) {
        seg.labels[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (size_t i = 0; i < n; ++i) {
      const size_t c = static_cast<size_t>(seg.labels[i]);
      counts[c]++;
      for (size_t d = 0; d < dims; ++d) sums[c * dims + d] += feat[i * dims + d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) continue;  // keep stale center
      for (size_t d = 0; d < dims; ++d)
        centers[static_cast<size_t>(c) * dims + d] =
            sums[static_cast<size_t>(c) * dims + d] /
            static_cast<double>(counts[static_cast<size_t>(c)]);
    }
  }
  return seg;
}

inline SegmentMap segment(const ImageRGB& img, int k, uint64_t seed = 1) {
  return segment(image_to_tensor(img), k, seed);
}

// pixels whose 4-neighbourhood spans at least two labels
inline ImagePlane boundary_plane(const SegmentMap& seg) {
  ImagePlane b(seg.width, seg.height, 0.0);
  const long W = static_cast<long>(seg.width), H = static_cast<long>(seg.height);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      const int l = seg.labels[static_cast<size_t>(y * W + x)];
      const long ns[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& nb : ns) {
        if (nb[0] < 0 || nb[0] >= H || nb[1] < 0 || nb[1] >= W) continue;
        if (seg.labels[static_cast<size_t>(nb[0] * W + nb[1])] != l) {
          b.values[static_cast<size_t>(y * W + x)] = 1.0;
          break;
        }
      }
    }
  return b;
}

// ---------------------------------------------------------------------------
// branch assembly
// ---------------------------------------------------------------------------

constexpr size_t kMidStem = 32;
constexpr double kMidLogSigma = 1.0;
constexpr size_t kAlignRadius = 2;

struct MidBranchParams {
  Tensor conv, bias;      // [3x3x5x32], [32]
  Tensor proj_w, proj_b;  // [32x256], [256]
};

inline MidBranchParams make_mid_params(Rng& rng) {
  MidBranchParams p;
  p.conv = uniform_init({3, 3, 5, kMidStem}, 3 * 3 * 5, rng);
  p.bias = Tensor({kMidStem});
  p.proj_w = uniform_init({kMidStem, kTokenDim}, kMidStem, rng);
  p.proj_b = Tensor({kTokenDim});
  return p;
}

struct MidFeatures {
  Tensor stack;  // [H x W x 5]: canny, sobel magnitude, LoG, boundary, alignment
};

// Builds the five-channel stack. Sobel, LoG and the alignment plane are
// differentiable in the image; Canny and the segmentation boundary enter as
// constants (their pipelines are thresholded/discrete).
inline MidFeatures compute_mid_features(Graph& g, const Tensor& img, const SegmentMap& seg) {
  const size_t H = img.shape()[0], W = img.shape()[1];
  if (seg.width != W || seg.height != H)
    throw DimensionError("compute_mid_features: segmentation size mismatch");
  Tensor gray = ops::rgb_to_gray(g, img);

  Tensor pair = ops::sobel_pair(g, gray);
  Tensor gx = ff::ops::reshape(g, ff::ops::slice_last(g, pair, 0, 1), {H, W});
  Tensor gy = ff::ops::reshape(g, ff::ops::slice_last(g, pair, 1, 2), {H, W});
  Tensor mag = ff::ops::vsqrt(
      g, ff::ops::add(g, ff::ops::mul(g, gx, gx), ff::ops::mul(g, gy, gy)));

  Tensor logp = ops::laplacian5(g, ops::blur_clamp(g, gray, kMidLogSigma));

  ImagePlane gray_plane(W, H);
  {  // detached copy for the discrete operators
    gray_plane.values.assign(gray.values().begin(), gray.values().end());
  }
  ImagePlane canny_plane = canny(gray_plane);
  ImagePlane b_plane = boundary_plane(seg);

  // alignment: windowed max of max-normalized sobel magnitude, gated to
  // boundary pixels
  double max_mag = 0.0;
  for (size_t i = 0; i < mag.size(); ++i) max_mag = std::max(max_mag, mag[i]);
  Tensor norm_mag = max_mag > 0.0 ? ff::ops::div_scalar(g, mag, ff::ops::max_all(g, mag))
                                  : ff::ops::scale(g, mag, 0.0);
  Tensor wmax = ff::ops::window_max(g, norm_mag, kAlignRadius);
  Tensor align = ff::ops::mul(g, wmax, Tensor::from({H, W}, b_plane.values));

  Tensor canny_t = ff::ops::reshape(g, Tensor::from({H, W}, canny_plane.values), {H, W, 1});
  Tensor mag_t = ff::ops::reshape(g, mag, {H, W, 1});
  Tensor log_t = ff::ops::reshape(g, logp, {H, W, 1});
  Tensor b_t = ff::ops::reshape(g, Tensor::from({H, W}, b_plane.values), {H, W, 1});
  Tensor a_t = ff::ops::reshape(g, align, {H, W, 1});
  return {ff::ops::concat_last(g, {canny_t, mag_t, log_t, b_t, a_t})};
}

inline Tensor mid_branch_forward(Graph& g, const MidFeatures& f, const MidBranchParams& p,
                                 size_t grid) {
  Tensor c = ff::ops::conv2d(g, f.stack, p.conv, ff::ops::Pad::Same);
  const size_t h = c.shape()[0], w = c.shape()[1];
  Tensor biased = ff::ops::reshape(
      g, ff::ops::add_rowvec(g, ff::ops::reshape(g, c, {h * w, kMidStem}), p.bias),
      {h, w, kMidStem});
  Tensor grid_feat = ff::ops::bilinear_resize(g, biased, grid, grid);
  Tensor flat = ff::ops::reshape(g, grid_feat, {grid * grid, kMidStem});
  return ff::ops::linear(g, flat, p.proj_w, p.proj_b);
}

// mean of the alignment channel over boundary pixels (diagnostic used by
// tests and the ablation analysis)
inline double mean_boundary_alignment(const MidFeatures& f) {
  const size_t H = f.stack.shape()[0], W = f.stack.shape()[1];
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < H * W; ++i) {
    if (f.stack[i * 5 + 3] > 0.5) {
      sum += f.stack[i * 5 + 4];
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace ff
