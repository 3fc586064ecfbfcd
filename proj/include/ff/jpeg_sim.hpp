#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ff/error.hpp"
#include "ff/image.hpp"

namespace ff {

// Baseline JPEG quantization tables (luma / chroma), zig-zag free layout.
inline const std::array<int, 64>& jpeg_luma_table() {
  static const std::array<int, 64> t = {
      16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
      14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
      18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
      49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  return t;
}

inline const std::array<int, 64>& jpeg_chroma_table() {
  static const std::array<int, 64> t = {
      17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
      24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
      99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
      99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};
  return t;
}

// IJG quality scaling: scale = 5000/Q for Q < 50 else 200 - 2Q,
// step = max(1, floor((t*scale + 50) / 100)).
inline int jpeg_quant_step(int table_value, int quality) {
  if (quality < 1 || quality > 100) throw ContractError("jpeg quality must be in [1,100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const int step = (table_value * scale + 50) / 100;
  return step < 1 ? 1 : step;
}

inline double quantize_dequantize(double coeff, int step) {
  return static_cast<double>(step) * std::round(coeff / static_cast<double>(step));
}

namespace detail_jpeg {

// orthonormal 8x8 DCT-II basis (rows index frequency)
inline const std::array<double, 64>& dct8_basis() {
  static const std::array<double, 64> m = [] {
    std::array<double, 64> b{};
    const double pi = 3.14159265358979323846;
    for (int u = 0; u < 8; ++u) {
      const double alpha = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x)
        b[static_cast<size_t>(u * 8 + x)] =
            alpha * std::cos(pi * u * (2.0 * x + 1.0) / 16.0);
    }
    return b;
  }();
  return m;
}

// D = M * X * M^T (forward) or X = M^T * D * M (inverse)
inline void dct8x8(const double* in, double* out, bool inverse) {
  const auto& m = dct8_basis();
  double tmp[64];
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) {
        const double mv = inverse ? m[static_cast<size_t>(k * 8 + i)] : m[static_cast<size_t>(i * 8 + k)];
        acc += mv * in[k * 8 + j];
      }
      tmp[i * 8 + j] = acc;
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) {
        const double mv = inverse ? m[static_cast<size_t>(k * 8 + j)] : m[static_cast<size_t>(j * 8 + k)];
        acc += tmp[i * 8 + k] * mv;
      }
      out[i * 8 + j] = acc;
    }
}

inline void quantize_channel(std::vector<double>& ch, size_t w, size_t h,
                             const std::array<int, 64>& table, int quality) {
  const size_t bw = (w + 7) / 8, bh = (h + 7) / 8;
  std::array<int, 64> steps;
  for (int i = 0; i < 64; ++i) steps[static_cast<size_t>(i)] = jpeg_quant_step(table[static_cast<size_t>(i)], quality);
  double block[64], coef[64];
  for (size_t by = 0; by < bh; ++by)
    for (size_t bx = 0; bx < bw; ++bx) {
      for (size_t y = 0; y < 8; ++y)
        for (size_t x = 0; x < 8; ++x) {
          const size_t sy = std::min(by * 8 + y, h - 1);  // edge replication pad
          const size_t sx = std::min(bx * 8 + x, w - 1);
          block[y * 8 + x] = ch[sy * w + sx] - 128.0;
        }
      dct8x8(block, coef, false);
      for (int i = 0; i < 64; ++i) coef[i] = quantize_dequantize(coef[i], steps[static_cast<size_t>(i)]);
      dct8x8(coef, block, true);
      for (size_t y = 0; y < 8; ++y)
        for (size_t x = 0; x < 8; ++x) {
          const size_t sy = by * 8 + y, sx = bx * 8 + x;
          if (sy < h && sx < w) ch[sy * w + sx] = block[y * 8 + x] + 128.0;
        }
    }
}

}  // namespace detail_jpeg

// JPEG round-trip simulator: YCbCr conversion, per-channel orthonormal 8x8
// block DCT, quantize/dequantize with IJG-scaled baseline tables, inverse.
// 4:4:4 (no chroma subsampling) and no entropy coding, so the only loss is
// quantization; quality is monotone by construction.
inline ImageRGB jpeg_simulate(const ImageRGB& img, int quality) {
  if (quality < 1 || quality > 100) throw ContractError("jpeg quality must be in [1,100]");
  const size_t w = img.width, h = img.height, n = w * h;
  std::vector<double> Y(n), Cb(n), Cr(n);
  for (size_t i = 0; i < n; ++i) {
    const double r = img.pixels[3 * i], g = img.pixels[3 * i + 1], b = img.pixels[3 * i + 2];
    Y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    Cb[i] = 128.0 - 0.168735892 * r - 0.331264108 * g + 0.5 * b;
    Cr[i] = 128.0 + 0.5 * r - 0.418687589 * g - 0.081312411 * b;
  }
  detail_jpeg::quantize_channel(Y, w, h, jpeg_luma_table(), quality);
  detail_jpeg::quantize_channel(Cb, w, h, jpeg_chroma_table(), quality);
  detail_jpeg::quantize_channel(Cr, w, h, jpeg_chroma_table(), quality);
  ImageRGB out(w, h);
  for (size_t i = 0; i < n; ++i) {
    const double y = Y[i], cb = Cb[i] - 128.0, cr = Cr[i] - 128.0;
    out.pixels[3 * i] = clamp_u8(y + 1.402 * cr);
    out.pixels[3 * i + 1] = clamp_u8(y - 0.344136286 * cb - 0.714136286 * cr);
    out.pixels[3 * i + 2] = clamp_u8(y + 1.772 * cb);
  }
  return out;
}

}  // namespace ff
