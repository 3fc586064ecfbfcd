#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <vector>

#include "ff/error.hpp"
#include "ff/image.hpp"
#include "ff/tensor.hpp"

namespace ff {

struct Region {
  int id = 0;
  size_t area = 0;
  double cx = 0.0;
  double cy = 0.0;
};

struct ShadowDetection {
  ImagePlane mask;
  std::vector<Region> regions;
};

namespace detail_high {

// HSV-style saturation per pixel; img01 is [H x W x 3] in [0,1]
inline std::vector<double> saturation(const Tensor& img01) {
  const size_t n = img01.shape()[0] * img01.shape()[1];
  std::vector<double> s(n);
  for (size_t i = 0; i < n; ++i) {
    const double r = img01[3 * i], g = img01[3 * i + 1], b = img01[3 * i + 2];
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    s[i] = mx > 0.0 ? (mx - mn) / mx : 0.0;
  }
  return s;
}

// luminance plane of an [H x W x 3] tensor
inline ImagePlane luma_plane(const Tensor& img01) {
  ImagePlane p(img01.shape()[1], img01.shape()[0]);
  const size_t n = p.values.size();
  for (size_t i = 0; i < n; ++i)
    p.values[i] = kLumaR * img01[3 * i] + kLumaG * img01[3 * i + 1] + kLumaB * img01[3 * i + 2];
  return p;
}

inline std::vector<double> box_mean(const std::vector<double>& v, size_t w, size_t h, long r) {
  std::vector<double> out(v.size());
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      size_t count = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || yy >= static_cast<long>(h) || xx < 0 || xx >= static_cast<long>(w)) continue;
          acc += v[static_cast<size_t>(yy) * w + static_cast<size_t>(xx)];
          ++count;
        }
      out[y * w + x] = acc / static_cast<double>(count);
    }
  return out;
}

// 4-connected components over a binary plane; regions ordered by first pixel
inline std::vector<Region> components(const std::vector<uint8_t>& bin, size_t w, size_t h,
                                      size_t min_area, std::vector<int>* label_out = nullptr) {
  std::vector<int> label(w * h, -1);
  std::vector<Region> regions;
  for (size_t start = 0; start < bin.size(); ++start) {
    if (!bin[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(regions.size());
    std::deque<size_t> queue{start};
    label[start] = id;
    Region reg{id, 0, 0.0, 0.0};
    while (!queue.empty()) {
      const size_t i = queue.front();
      queue.pop_front();
      reg.area++;
      reg.cx += static_cast<double>(i % w);
      reg.cy += static_cast<double>(i / w);
      const long y = static_cast<long>(i / w), x = static_cast<long>(i % w);
      const long ns[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& nb : ns) {
        if (nb[0] < 0 || nb[0] >= static_cast<long>(h) || nb[1] < 0 || nb[1] >= static_cast<long>(w))
          continue;
        const size_t j = static_cast<size_t>(nb[0]) * w + static_cast<size_t>(nb[1]);
        if (bin[j] && label[j] < 0) {
          label[j] = id;
          queue.push_back(j);
        }
      }
    }
    reg.cx /= static_cast<double>(reg.area);
    reg.cy /= static_cast<double>(reg.area);
    regions.push_back(reg);
  }
  // filter small regions, renumbering densely
  std::vector<Region> kept;
  for (const Region& r : regions)
    if (r.area >= min_area) {
      Region k = r;
      k.id = static_cast<int>(kept.size());
      kept.push_back(k);
    }
  if (label_out) *label_out = std::move(label);
  return kept;
}

}  // namespace detail_high

constexpr double kShadowLumaFactor = 0.35;
constexpr double kShadowSatDrop = 0.2;
constexpr size_t kShadowMinArea = 30;

// Shadow candidates: darker than 0.35x the mean luminance with a local
// saturation drop below 0.2 (real shadows darken without desaturating);
// 4-connected components of at least 30 px become regions.
inline ShadowDetection detect_shadows(const Tensor& img01) {
  const size_t w = img01.shape()[1], h = img01.shape()[0];
  ImagePlane luma = detail_high::luma_plane(img01);
  double mean_luma = 0.0;
  for (double v : luma.values) mean_luma += v;
  mean_luma /= static_cast<double>(luma.values.size());
  auto sat = detail_high::saturation(img01);
  auto sat_local = detail_high::box_mean(sat, w, h, 4);
  std::vector<uint8_t> candidate(w * h, 0);
  for (size_t i = 0; i < candidate.size(); ++i) {
    const double drop = sat_local[i] - sat[i];
    candidate[i] = luma.values[i] < kShadowLumaFactor * mean_luma && drop < kShadowSatDrop;
  }
  ShadowDetection det{ImagePlane(w, h, 0.0), {}};
  det.regions = detail_high::components(candidate, w, h, kShadowMinArea);
  for (size_t i = 0; i < candidate.size(); ++i)
    if (candidate[i]) det.mask.values[i] = 1.0;
  return det;
}

// unit vector from the image center toward the centroid of the brightest 1%
// of pixels; (1, 0) when degenerate
inline std::pair<double, double> estimate_light_dir(const Tensor& img01) {
  const size_t width = img01.shape()[1], height = img01.shape()[0];
  ImagePlane luma = detail_high::luma_plane(img01);
  const size_t n = luma.values.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const size_t m = std::max<size_t>(1, (n + 99) / 100);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (luma.values[a] != luma.values[b]) return luma.values[a] > luma.values[b];
    return a < b;
  });
  double cx = 0.0, cy = 0.0;
  for (size_t i = 0; i < m; ++i) {
    cx += static_cast<double>(idx[i] % width);
    cy += static_cast<double>(idx[i] / width);
  }
  cx /= static_cast<double>(m);
  cy /= static_cast<double>(m);
  const double dx = cx - (static_cast<double>(width) - 1.0) / 2.0;
  const double dy = cy - (static_cast<double>(height) - 1.0) / 2.0;
  const double norm = std::sqrt(dx * dx + dy * dy);
  if (norm < 1e-9) return {1.0, 0.0};
  return {dx / norm, dy / norm};
}

struct RegionPair {
  double object_x = 0.0, object_y = 0.0;
  double shadow_x = 0.0, shadow_y = 0.0;
  int object_id = 0, shadow_id = 0;
};

// Cosine between the observed object->shadow direction and the expected
// shadow direction (opposite the light). Coincident centroids are skipped;
// `skipped` reports how many. Scores are in [-1, 1].
inline std::vector<double> shadow_consistency(const std::vector<RegionPair>& pairs,
                                              std::pair<double, double> light_dir,
                                              size_t* skipped = nullptr) {
  const double ln = std::sqrt(light_dir.first * light_dir.first +
                              light_dir.second * light_dir.second);
  if (ln < 1e-12) throw ContractError("shadow_consistency: light direction must be nonzero");
  const double ex = -light_dir.first / ln, ey = -light_dir.second / ln;
  std::vector<double> scores;
  size_t skip_count = 0;
  for (const RegionPair& p : pairs) {
    const double dx = p.shadow_x - p.object_x, dy = p.shadow_y - p.object_y;
    const double norm = std::sqrt(dx * dx + dy * dy);
    if (norm < 1e-12) {
      ++skip_count;
      continue;
    }
    scores.push_back(std::clamp(ex * dx / norm + ey * dy / norm, -1.0, 1.0));
  }
  if (skipped) *skipped = skip_count;
  return scores;
}

// neutral score 1.0 for an empty pair list
inline double mean_shadow_score(const std::vector<double>& scores) {
  if (scores.empty()) return 1.0;
  double s = 0.0;
  for (double v : scores) s += v;
  return s / static_cast<double>(scores.size());
}

// Pairs each shadow region with the nearest bright component (luminance
// above the mean, 30+ px); a toy stand-in for object/shadow association.
inline std::vector<RegionPair> pair_shadows_with_objects(const Tensor& img01,
                                                         const std::vector<Region>& shadows) {
  if (shadows.empty()) return {};
  ImagePlane luma = detail_high::luma_plane(img01);
  double mean_luma = 0.0;
  for (double v : luma.values) mean_luma += v;
  mean_luma /= static_cast<double>(luma.values.size());
  std::vector<uint8_t> bright(luma.values.size(), 0);
  for (size_t i = 0; i < bright.size(); ++i) bright[i] = luma.values[i] > mean_luma ? 1 : 0;
  auto objects = detail_high::components(bright, luma.width, luma.height, kShadowMinArea);
  if (objects.empty()) return {};
  std::vector<RegionPair> pairs;
  for (const Region& s : shadows) {
    size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < objects.size(); ++i) {
      const double dx = objects[i].cx - s.cx, dy = objects[i].cy - s.cy;
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    pairs.push_back({objects[best].cx, objects[best].cy, s.cx, s.cy,
                     objects[best].id, s.id});
  }
  return pairs;
}

// Normalized cross-correlation between the band below the axis row and the
// mirrored band above it. Zero-variance bands score 0; bit-identical bands
// score exactly 1.
inline double reflection_symmetry(const Tensor& img01, size_t axis_row) {
  const size_t height = img01.shape()[0], width = img01.shape()[1];
  if (axis_row < 1 || axis_row + 1 >= height)
    throw ContractError("reflection_symmetry: axis on border");
  ImagePlane gray = detail_high::luma_plane(img01);
  const size_t band = std::min(axis_row, height - 1 - axis_row);
  const size_t n = band * width;
  double ma = 0.0, mb = 0.0;
  for (size_t k = 1; k <= band; ++k)
    for (size_t x = 0; x < width; ++x) {
      ma += gray.at(x, axis_row - k);
      mb += gray.at(x, axis_row + k);
    }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double num = 0.0, sa = 0.0, sb = 0.0;
  for (size_t k = 1; k <= band; ++k)
    for (size_t x = 0; x < width; ++x) {
      const double a = gray.at(x, axis_row - k) - ma;
      const double b = gray.at(x, axis_row + k) - mb;
      num += a * b;
      sa += a * a;
      sb += b * b;
    }
  if (sa == 0.0 || sb == 0.0) return 0.0;
  if (num == sa && sa == sb) return 1.0;  // identical bands
  return std::clamp(num / std::sqrt(sa * sb), -1.0, 1.0);
}

constexpr double kDepthBlurSigma = 4.0;

// Heuristic monocular depth stand-in: heavily smoothed luminance, min-max
// normalized; a degenerate (constant) field maps to all 0.5.
inline ImagePlane pseudo_depth(const Tensor& img01) {
  ImagePlane z = gaussian_blur(detail_high::luma_plane(img01), kDepthBlurSigma);
  double lo = z.values[0], hi = z.values[0];
  for (double v : z.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-15) {
    std::fill(z.values.begin(), z.values.end(), 0.5);
    return z;
  }
  for (double& v : z.values) v = (v - lo) / (hi - lo);
  return z;
}

// score = -||grad Z||_1 + lambda * TV(Z), every term mean-normalized over
// its own forward-difference domain
inline double depth_coherence(const ImagePlane& z, double lambda = 0.0) {
  if (lambda < 0.0) throw ContractError("depth_coherence: lambda must be >= 0");
  const size_t w = z.width, h = z.height;
  double l1 = 0.0;
  if (w > 1) {
    double acc = 0.0;
    for (size_t y = 0; y < h; ++y)
      for (size_t x = 0; x + 1 < w; ++x) acc += std::fabs(z.at(x + 1, y) - z.at(x, y));
    l1 += acc / static_cast<double>((w - 1) * h);
  }
  if (h > 1) {
    double acc = 0.0;
    for (size_t y = 0; y + 1 < h; ++y)
      for (size_t x = 0; x < w; ++x) acc += std::fabs(z.at(x, y + 1) - z.at(x, y));
    l1 += acc / static_cast<double>(w * (h - 1));
  }
  double tv = 0.0;
  if (w > 1 && h > 1) {
    double acc = 0.0;
    for (size_t y = 0; y + 1 < h; ++y)
      for (size_t x = 0; x + 1 < w; ++x) {
        const double dx = z.at(x + 1, y) - z.at(x, y);
        const double dy = z.at(x, y + 1) - z.at(x, y);
        acc += std::sqrt(dx * dx + dy * dy);
      }
    tv = acc / static_cast<double>((w - 1) * (h - 1));
  }
  return -l1 + lambda * tv;
}

// ---------------------------------------------------------------------------
// branch assembly
// ---------------------------------------------------------------------------

constexpr size_t kHighStem = 32;

struct HighBranchParams {
  Tensor conv, bias;      // [3x3x4x32], [32]
  Tensor proj_w, proj_b;  // [32x256], [256]
};

inline HighBranchParams make_high_params(Rng& rng) {
  HighBranchParams p;
  p.conv = uniform_init({3, 3, 4, kHighStem}, 3 * 3 * 4, rng);
  p.bias = Tensor({kHighStem});
  p.proj_w = uniform_init({kHighStem, kTokenDim}, kHighStem, rng);
  p.proj_b = Tensor({kTokenDim});
  return p;
}

struct HighFeatures {
  Tensor stack;  // [H x W x 4]: shadow score, reflection score, Z, |grad Z|
  double shadow_score = 1.0;
  double reflection_score = 0.0;
};

// The stack is constant with respect to the image: every channel passes
// through region detection, ranking, or min-max normalization, whose
// almost-everywhere gradients are zero or concentrated on single pixels.
inline HighFeatures compute_high_features(const Tensor& img01,
                                          const ImagePlane* external_depth = nullptr,
                                          size_t reflection_axis = 0) {
  const size_t w = img01.shape()[1], h = img01.shape()[0];
  ShadowDetection shadows = detect_shadows(img01);
  auto pairs = pair_shadows_with_objects(img01, shadows.regions);
  const double s_shadow = mean_shadow_score(shadow_consistency(pairs, estimate_light_dir(img01)));
  if (reflection_axis == 0) reflection_axis = h / 2;
  const double s_refl = reflection_symmetry(img01, reflection_axis);
  ImagePlane z = external_depth ? *external_depth : pseudo_depth(img01);
  if (z.width != w || z.height != h)
    throw DimensionError("compute_high_features: depth map size mismatch");

  HighFeatures f;
  f.shadow_score = s_shadow;
  f.reflection_score = s_refl;
  f.stack = Tensor({h, w, 4});
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      const double zx = x + 1 < w ? z.at(x + 1, y) - z.at(x, y) : 0.0;
      const double zy = y + 1 < h ? z.at(x, y + 1) - z.at(x, y) : 0.0;
      double* out = f.stack.data() + (y * w + x) * 4;
      out[0] = s_shadow;
      out[1] = s_refl;
      out[2] = z.at(x, y);
      out[3] = std::sqrt(zx * zx + zy * zy);
    }
  return f;
}

inline ShadowDetection detect_shadows(const ImageRGB& img) {
  return detect_shadows(image_to_tensor(img));
}
inline std::pair<double, double> estimate_light_dir(const ImageRGB& img) {
  return estimate_light_dir(image_to_tensor(img));
}
inline double reflection_symmetry(const ImageRGB& img, size_t axis_row) {
  return reflection_symmetry(image_to_tensor(img), axis_row);
}
inline ImagePlane pseudo_depth(const ImageRGB& img) {
  return pseudo_depth(image_to_tensor(img));
}
inline HighFeatures compute_high_features(const ImageRGB& img,
                                          const ImagePlane* external_depth = nullptr,
                                          size_t reflection_axis = 0) {
  return compute_high_features(image_to_tensor(img), external_depth, reflection_axis);
}

inline Tensor high_branch_forward(Graph& g, const HighFeatures& f, const HighBranchParams& p,
                                  size_t grid) {
  Tensor c = ff::ops::conv2d(g, f.stack, p.conv, ff::ops::Pad::Same);
  const size_t h = c.shape()[0], w = c.shape()[1];
  Tensor biased = ff::ops::reshape(
      g, ff::ops::add_rowvec(g, ff::ops::reshape(g, c, {h * w, kHighStem}), p.bias),
      {h, w, kHighStem});
  Tensor grid_feat = ff::ops::bilinear_resize(g, biased, grid, grid);
  Tensor flat = ff::ops::reshape(g, grid_feat, {grid * grid, kHighStem});
  return ff::ops::linear(g, flat, p.proj_w, p.proj_b);
}

}  // namespace ff
