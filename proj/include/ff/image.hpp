#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ff/error.hpp"
#include "ff/tensor.hpp"

namespace ff {

constexpr size_t kMinImageSide = 8;

// 8-bit RGB raster, row-major, no padding.
struct ImageRGB {
  size_t width = 0;
  size_t height = 0;
  std::vector<uint8_t> pixels;  // 3 * width * height

  ImageRGB() = default;
  ImageRGB(size_t w, size_t h) : width(w), height(h), pixels(3 * w * h, 0) {
    if (w < kMinImageSide || h < kMinImageSide)
      throw ContractError("ImageRGB: dimensions below minimum of 8");
  }
  uint8_t* px(size_t x, size_t y) { return pixels.data() + 3 * (y * width + x); }
  const uint8_t* px(size_t x, size_t y) const { return pixels.data() + 3 * (y * width + x); }
};

// Single-channel f64 raster with values in [0, 1].
struct ImagePlane {
  size_t width = 0;
  size_t height = 0;
  std::vector<double> values;

  ImagePlane() = default;
  ImagePlane(size_t w, size_t h, double fill = 0.0) : width(w), height(h), values(w * h, fill) {}
  double& at(size_t x, size_t y) { return values[y * width + x]; }
  double at(size_t x, size_t y) const { return values[y * width + x]; }
};

// BT.601 luma weights.
constexpr double kLumaR = 0.299;
constexpr double kLumaG = 0.587;
constexpr double kLumaB = 0.114;

inline ImagePlane to_gray(const ImageRGB& img) {
  ImagePlane p(img.width, img.height);
  const size_t n = img.width * img.height;
  for (size_t i = 0; i < n; ++i) {
    const uint8_t* px = img.pixels.data() + 3 * i;
    p.values[i] = (kLumaR * px[0] + kLumaG * px[1] + kLumaB * px[2]) / 255.0;
  }
  return p;
}

inline uint8_t clamp_u8(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

// [0,1] f64 image tensor [H x W x 3]; the network-facing carrier.
inline Tensor image_to_tensor(const ImageRGB& img) {
  Tensor t({img.height, img.width, 3});
  for (size_t i = 0; i < img.pixels.size(); ++i)
    t[i] = static_cast<double>(img.pixels[i]) / 255.0;
  return t;
}

inline ImageRGB tensor_to_image(const Tensor& t) {
  if (t.ndim() != 3 || t.shape()[2] != 3) throw DimensionError("tensor_to_image expects [HxWx3]");
  ImageRGB img(t.shape()[1], t.shape()[0]);
  for (size_t i = 0; i < t.size(); ++i) img.pixels[i] = clamp_u8(t[i] * 255.0);
  return img;
}

inline Tensor plane_to_tensor(const ImagePlane& p) {
  return Tensor::from({p.height, p.width}, p.values);
}

inline ImagePlane tensor_to_plane(const Tensor& t) {
  if (t.ndim() != 2) throw DimensionError("tensor_to_plane expects [H x W]");
  ImagePlane p(t.shape()[1], t.shape()[0]);
  p.values = t.values();
  return p;
}

// token vector width shared by all three branches
constexpr size_t kTokenDim = 256;

namespace ops {

// differentiable BT.601 grayscale: [H x W x 3] -> [H x W]
inline Tensor rgb_to_gray(Graph& g, const Tensor& img) {
  if (img.ndim() != 3 || img.shape()[2] != 3)
    throw DimensionError("rgb_to_gray expects [H x W x 3]");
  const size_t H = img.shape()[0], W = img.shape()[1];
  Tensor y({H, W});
  for (size_t i = 0; i < H * W; ++i)
    y[i] = kLumaR * img[3 * i] + kLumaG * img[3 * i + 1] + kLumaB * img[3 * i + 2];
  if (ff::ops::track_any(g, {&img})) {
    g.mark_output(y);
    auto xd = img.handle(), yd = y.handle();
    g.record("rgb_to_gray", [&g, xd, yd, H, W]() {
      const double* gy = g.grad_of(yd);
      if (!gy) return;
      if (double* gx = g.grad_slot(xd))
        for (size_t i = 0; i < H * W; ++i) {
          gx[3 * i] += kLumaR * gy[i];
          gx[3 * i + 1] += kLumaG * gy[i];
          gx[3 * i + 2] += kLumaB * gy[i];
        }
    });
  }
  return y;
}

}  // namespace ops

namespace detail_img {

// shared bilinear sampling in lerp form; constants resize to themselves
template <class Get, class Put>
void resize_bilinear_impl(size_t sw, size_t sh, size_t dw, size_t dh, size_t channels, Get get,
                          Put put) {
  for (size_t y = 0; y < dh; ++y) {
    const auto cy = ops::detail::lerp_coord(y, dh, sh);
    for (size_t x = 0; x < dw; ++x) {
      const auto cx = ops::detail::lerp_coord(x, dw, sw);
      for (size_t c = 0; c < channels; ++c) {
        const double v00 = get(cx.i0, cy.i0, c);
        const double v01 = get(cx.i1, cy.i0, c);
        const double v10 = get(cx.i0, cy.i1, c);
        const double v11 = get(cx.i1, cy.i1, c);
        const double top = v00 + cx.f * (v01 - v00);
        const double bot = v10 + cx.f * (v11 - v10);
        put(x, y, c, top + cy.f * (bot - top));
      }
    }
  }
}

}  // namespace detail_img

inline ImageRGB resize_bilinear(const ImageRGB& img, size_t new_w, size_t new_h) {
  if (new_w < kMinImageSide || new_h < kMinImageSide)
    throw ContractError("resize_bilinear: target size below minimum of 8");
  ImageRGB out(new_w, new_h);
  detail_img::resize_bilinear_impl(
      img.width, img.height, new_w, new_h, 3,
      [&](size_t x, size_t y, size_t c) { return static_cast<double>(img.px(x, y)[c]); },
      [&](size_t x, size_t y, size_t c, double v) { out.px(x, y)[c] = clamp_u8(v); });
  return out;
}

inline ImagePlane resize_bilinear(const ImagePlane& p, size_t new_w, size_t new_h) {
  if (new_w == 0 || new_h == 0) throw ContractError("resize_bilinear: degenerate target size");
  ImagePlane out(new_w, new_h);
  detail_img::resize_bilinear_impl(
      p.width, p.height, new_w, new_h, 1,
      [&](size_t x, size_t y, size_t) { return p.at(x, y); },
      [&](size_t x, size_t y, size_t, double v) { out.at(x, y) = v; });
  return out;
}

// normalized 1-d Gaussian taps, radius ceil(3*sigma)
inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) throw ContractError("gaussian_kernel: sigma must be positive");
  const long r = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  double sum = 0.0;
  for (long i = -r; i <= r; ++i) {
    const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k[static_cast<size_t>(i + r)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace detail_img {

// separable blur with clamp-to-edge borders over an arbitrary scalar field
inline void blur_field(std::vector<double>& v, size_t w, size_t h, const std::vector<double>& k) {
  const long r = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(v.size());
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) {
        const long xx = std::clamp<long>(static_cast<long>(x) + i, 0, static_cast<long>(w) - 1);
        acc += k[static_cast<size_t>(i + r)] * v[y * w + static_cast<size_t>(xx)];
      }
      tmp[y * w + x] = acc;
    }
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) {
        const long yy = std::clamp<long>(static_cast<long>(y) + i, 0, static_cast<long>(h) - 1);
        acc += k[static_cast<size_t>(i + r)] * tmp[static_cast<size_t>(yy) * w + x];
      }
      v[y * w + x] = acc;
    }
}

}  // namespace detail_img

inline ImagePlane gaussian_blur(const ImagePlane& p, double sigma) {
  auto k = gaussian_kernel(sigma);
  ImagePlane out = p;
  detail_img::blur_field(out.values, out.width, out.height, k);
  return out;
}

inline ImageRGB gaussian_blur(const ImageRGB& img, double sigma) {
  auto k = gaussian_kernel(sigma);
  ImageRGB out(img.width, img.height);
  std::vector<double> ch(img.width * img.height);
  for (size_t c = 0; c < 3; ++c) {
    for (size_t i = 0; i < ch.size(); ++i) ch[i] = img.pixels[3 * i + c];
    detail_img::blur_field(ch, img.width, img.height, k);
    for (size_t i = 0; i < ch.size(); ++i) out.pixels[3 * i + c] = clamp_u8(ch[i]);
  }
  return out;
}

}  // namespace ff
