#pragma once

#include <array>
#include <cstdint>

#include "ff/error.hpp"
#include "ff/rng.hpp"
#include "ff/tensor.hpp"

namespace ff {

// The classic 30-kernel spatial-rich-model residual bank: 8 first-order,
// 4 second-order and 8 third-order directional differences, SQUARE 3x3,
// SQUARE 5x5, and 4+4 EDGE variants. Kernels are kept integer-valued
// (no quantization scaling) so each one sums to exactly zero; smaller
// kernels are zero-padded to 5x5.
inline const std::array<std::array<double, 25>, 30>& srm_bank() {
  static const std::array<std::array<double, 25>, 30> bank = [] {
    std::array<std::array<double, 25>, 30> b{};
    auto at = [](std::array<double, 25>& k, int dy, int dx) -> double& {
      return k[static_cast<size_t>((dy + 2) * 5 + (dx + 2))];
    };
    size_t idx = 0;
    const int dirs[8][2] = {{0, 1}, {-1, 1}, {-1, 0}, {-1, -1},
                            {0, -1}, {1, -1}, {1, 0}, {1, 1}};
    // first order: neighbour minus center
    for (const auto& d : dirs) {
      auto& k = b[idx++];
      at(k, 0, 0) = -1;
      at(k, d[0], d[1]) = 1;
    }
    // second order: [1, -2, 1] along four axes
    const int axes[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
    for (const auto& a : axes) {
      auto& k = b[idx++];
      at(k, -a[0], -a[1]) = 1;
      at(k, 0, 0) = -2;
      at(k, a[0], a[1]) = 1;
    }
    // third order: [-1, 3, -3, 1] at offsets -1..2 along eight directions
    for (const auto& d : dirs) {
      auto& k = b[idx++];
      at(k, -d[0], -d[1]) = -1;
      at(k, 0, 0) = 3;
      at(k, d[0], d[1]) = -3;
      at(k, 2 * d[0], 2 * d[1]) = 1;
    }
    // SQUARE 3x3
    {
      auto& k = b[idx++];
      const double sq3[3][3] = {{-1, 2, -1}, {2, -4, 2}, {-1, 2, -1}};
      for (int y = -1; y <= 1; ++y)
        for (int x = -1; x <= 1; ++x) at(k, y, x) = sq3[y + 1][x + 1];
    }
    // SQUARE 5x5
    const double sq5[5][5] = {{-1, 2, -2, 2, -1},
                              {2, -6, 8, -6, 2},
                              {-2, 8, -12, 8, -2},
                              {2, -6, 8, -6, 2},
                              {-1, 2, -2, 2, -1}};
    {
      auto& k = b[idx++];
      for (int y = -2; y <= 2; ++y)
        for (int x = -2; x <= 2; ++x) at(k, y, x) = sq5[y + 2][x + 2];
    }
    // EDGE 3x3 (top/bottom/left/right halves of SQUARE 3x3)
    for (int v = 0; v < 4; ++v) {
      auto& k = b[idx++];
      const double e3[3][3] = {{-1, 2, -1}, {2, -4, 2}, {0, 0, 0}};
      for (int y = -1; y <= 1; ++y)
        for (int x = -1; x <= 1; ++x) {
          int yy = y, xx = x;
          if (v == 1) yy = -y;                 // bottom
          if (v == 2) { yy = x; xx = y; }      // left
          if (v == 3) { yy = x; xx = -y; }     // right
          at(k, yy, xx) = e3[y + 1][x + 1];
        }
    }
    // EDGE 5x5 (half-plane of SQUARE 5x5, rotated per variant)
    for (int v = 0; v < 4; ++v) {
      auto& k = b[idx++];
      for (int y = -2; y <= 2; ++y)
        for (int x = -2; x <= 2; ++x) {
          if (y > 0) continue;  // keep rows -2..0 of the base pattern
          int yy = y, xx = x;
          if (v == 1) yy = -y;
          if (v == 2) { yy = x; xx = y; }
          if (v == 3) { yy = x; xx = -y; }
          at(k, yy, xx) = sq5[y + 2][x + 2];
        }
    }
    if (idx != 30) throw ContractError("srm bank construction error");
    for (const auto& k : b) {
      double s = 0.0;
      for (double v : k) s += v;
      if (s != 0.0) throw ContractError("srm kernel does not sum to zero");
    }
    return b;
  }();
  return bank;
}

// conv2d-ready constant tensor [5 x 5 x 1 x 30]
inline Tensor srm_kernel_tensor() {
  const auto& bank = srm_bank();
  Tensor k({5, 5, 1, 30});
  for (size_t f = 0; f < 30; ++f)
    for (size_t y = 0; y < 5; ++y)
      for (size_t x = 0; x < 5; ++x) k[(y * 5 + x) * 30 + f] = bank[f][y * 5 + x];
  return k;
}

// content hash of the compiled bank, for the frozen-table regression test
inline uint64_t srm_bank_hash() {
  const auto& bank = srm_bank();
  return fnv1a64(bank.data(), sizeof(bank));
}

}  // namespace ff
