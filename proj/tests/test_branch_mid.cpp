#include <doctest.h>

#include <cmath>
#include <set>

#include "ff/branch_mid.hpp"
#include "ff/image.hpp"
#include "ff/rng.hpp"

using namespace ff;

namespace {

ImagePlane rot90(const ImagePlane& p) {
  ImagePlane out(p.height, p.width);
  for (size_t y = 0; y < p.height; ++y)
    for (size_t x = 0; x < p.width; ++x) out.at(y, p.width - 1 - x) = p.at(x, y);
  return out;
}

ImagePlane vertical_step(size_t n, double lo, double hi) {
  ImagePlane p(n, n, lo);
  for (size_t y = 0; y < n; ++y)
    for (size_t x = n / 2; x < n; ++x) p.at(x, y) = hi;
  return p;
}

ImageRGB three_tone(size_t n) {
  ImageRGB img(n, n);
  Rng rng(12);
  for (size_t y = 0; y < n; ++y)
    for (size_t x = 0; x < n; ++x) {
      uint8_t* px = img.px(x, y);
      const int band = static_cast<int>(3 * x / n);
      const int j = static_cast<int>(rng.below(10));
      if (band == 0) { px[0] = static_cast<uint8_t>(220 + j / 2); px[1] = 30; px[2] = 30; }
      if (band == 1) { px[0] = 30; px[1] = static_cast<uint8_t>(200 + j); px[2] = 40; }
      if (band == 2) { px[0] = 25; px[1] = 60; px[2] = static_cast<uint8_t>(210 + j); }
    }
  return img;
}

}  // namespace

TEST_CASE("sobel: constants vanish, unit step responds with gain 4") {
  ImagePlane c(16, 16, 0.5);  // dyadic: tap sums cancel exactly
  ImagePlane m = sobel(c);
  for (double v : m.values) CHECK(v == 0.0);
  ImagePlane c2(16, 16, 0.42);
  for (double v : sobel(c2).values) CHECK(std::fabs(v) < 1e-15);

  ImagePlane step = vertical_step(16, 0.0, 1.0);
  ImagePlane sm = sobel(step);
  for (size_t y = 2; y < 14; ++y) {
    CHECK(sm.at(7, y) == doctest::Approx(4.0));
    CHECK(sm.at(8, y) == doctest::Approx(4.0));
    CHECK(sm.at(2, y) == 0.0);
    CHECK(sm.at(13, y) == 0.0);
  }
}

TEST_CASE("sobel magnitude commutes with 90-degree rotation") {
  Rng rng(7);
  ImagePlane p(12, 9);
  for (auto& v : p.values) v = rng.uniform();
  ImagePlane a = rot90(sobel(p));
  ImagePlane b = sobel(rot90(p));
  REQUIRE(a.width == b.width);
  REQUIRE(a.height == b.height);
  for (size_t i = 0; i < a.values.size(); ++i) CHECK(std::fabs(a.values[i] - b.values[i]) < 1e-12);
}

TEST_CASE("log filter: constants and ramps are flat, impulse matches the sampled form") {
  ImagePlane c(16, 16, 0.3);
  for (double v : log_filter(c, 1.0).values) CHECK(std::fabs(v) < 1e-14);

  ImagePlane ramp(24, 24);
  for (size_t y = 0; y < 24; ++y)
    for (size_t x = 0; x < 24; ++x) ramp.at(x, y) = (2.0 * x + y) / 72.0;
  ImagePlane lr = log_filter(ramp, 1.0);
  const long r = static_cast<long>(gaussian_kernel(1.0).size() / 2) + 1;
  for (long y = r; y < 24 - r; ++y)
    for (long x = r; x < 24 - r; ++x)
      CHECK(std::fabs(lr.at(static_cast<size_t>(x), static_cast<size_t>(y))) < 1e-12);

  // impulse response: analytic Gaussian taps pushed through the 5-point stencil
  const double sigma = 1.2;
  ImagePlane imp(33, 33, 0.0);
  imp.at(16, 16) = 1.0;
  ImagePlane got = log_filter(imp, sigma);
  auto k = gaussian_kernel(sigma);
  const long kr = static_cast<long>(k.size() / 2);
  auto gauss2 = [&](long dx, long dy) -> double {
    if (std::labs(dx) > kr || std::labs(dy) > kr) return 0.0;
    return k[static_cast<size_t>(dx + kr)] * k[static_cast<size_t>(dy + kr)];
  };
  for (long dy = -kr; dy <= kr; ++dy)
    for (long dx = -kr; dx <= kr; ++dx) {
      const double expect = gauss2(dx, dy - 1) + gauss2(dx, dy + 1) + gauss2(dx - 1, dy) +
                            gauss2(dx + 1, dy) - 4.0 * gauss2(dx, dy);
      CHECK(std::fabs(got.at(static_cast<size_t>(16 + dx), static_cast<size_t>(16 + dy)) - expect) <
            1e-4);
    }
  CHECK_THROWS_AS(log_filter(imp, -1.0), ContractError);
}

TEST_CASE("canny: empty on constants, one-pixel line on a step") {
  ImagePlane c(32, 32, 0.5);
  ImagePlane e = canny(c);
  for (double v : e.values) CHECK(v == 0.0);

  ImagePlane step = vertical_step(32, 0.2, 0.8);
  ImagePlane es = canny(step);
  for (size_t y = 4; y < 28; ++y) {
    size_t count = 0, col = 0;
    for (size_t x = 0; x < 32; ++x)
      if (es.at(x, y) == 1.0) {
        ++count;
        col = x;
      }
    CHECK(count == 1);
    CHECK((col == 15 || col == 16));
  }
  CHECK_THROWS_AS(canny(step, 1.0, 0.4, 0.2), ContractError);
  CHECK_THROWS_AS(canny(step, 1.0, 0.0, 0.3), ContractError);
}

TEST_CASE("canny: filled disk produces a closed ring of the right length") {
  const size_t n = 64;
  const double radius = 20.0;
  ImagePlane disk(n, n, 0.15);
  for (size_t y = 0; y < n; ++y)
    for (size_t x = 0; x < n; ++x) {
      const double dx = static_cast<double>(x) - 32.0, dy = static_cast<double>(y) - 32.0;
      if (dx * dx + dy * dy <= radius * radius) disk.at(x, y) = 0.85;
    }
  ImagePlane e = canny(disk);
  size_t count = 0;
  for (double v : e.values) count += v == 1.0 ? 1 : 0;
  const double expected = 2.0 * 3.14159265358979323846 * radius;
  CHECK(static_cast<double>(count) > 0.85 * expected);
  CHECK(static_cast<double>(count) < 1.15 * expected);

  // every edge pixel has nonzero sobel magnitude
  ImagePlane mag = sobel(disk);
  for (size_t i = 0; i < e.values.size(); ++i)
    if (e.values[i] == 1.0) CHECK(mag.values[i] > 0.0);
}

TEST_CASE("edge operators are translation-equivariant on interior pixels") {
  Rng rng(19);
  const size_t n = 24;
  ImagePlane p(n, n);
  for (auto& v : p.values) v = rng.uniform();
  ImagePlane shifted(n, n, 0.0);
  for (size_t y = 1; y < n; ++y)
    for (size_t x = 1; x < n; ++x) shifted.at(x, y) = p.at(x - 1, y - 1);
  ImagePlane ms = sobel(shifted), m = sobel(p);
  ImagePlane ls = log_filter(shifted, 1.0), l = log_filter(p, 1.0);
  const size_t guard = 6;  // blur radius + shift
  for (size_t y = guard; y < n - guard; ++y)
    for (size_t x = guard; x < n - guard; ++x) {
      CHECK(ms.at(x, y) == doctest::Approx(m.at(x - 1, y - 1)).epsilon(1e-12));
      CHECK(ls.at(x, y) == doctest::Approx(l.at(x - 1, y - 1)).epsilon(1e-12));
    }
}

TEST_CASE("segment: two-tone split, k=1 degenerate, three-cluster purity") {
  ImageRGB two(16, 16);
  for (size_t y = 0; y < 16; ++y)
    for (size_t x = 0; x < 16; ++x) {
      uint8_t* px = two.px(x, y);
      px[0] = px[1] = px[2] = x < 8 ? 40 : 215;
    }
  SegmentMap seg = segment(two, 2, 5);
  std::set<int> left, right;
  for (size_t y = 0; y < 16; ++y)
    for (size_t x = 0; x < 16; ++x)
      (x < 8 ? left : right).insert(seg.labels[y * 16 + x]);
  CHECK(left.size() == 1);
  CHECK(right.size() == 1);
  CHECK(*left.begin() != *right.begin());

  SegmentMap one = segment(two, 1, 5);
  for (int l : one.labels) CHECK(l == 0);

  ImageRGB tones = three_tone(30);
  SegmentMap s3 = segment(tones, 3, 9);
  // purity against the generator's three bands
  size_t votes[3][3] = {};
  for (size_t y = 0; y < 30; ++y)
    for (size_t x = 0; x < 30; ++x) votes[3 * x / 30][s3.labels[y * 30 + x]]++;
  size_t pure = 0;
  for (int band = 0; band < 3; ++band)
    pure += *std::max_element(votes[band], votes[band] + 3);
  CHECK(static_cast<double>(pure) / 900.0 >= 0.95);

  CHECK_THROWS_AS(segment(two, 0, 1), ContractError);
  CHECK_THROWS_AS(segment(two, 20, 1), ContractError);
}

TEST_CASE("segment is deterministic under a fixed seed") {
  ImageRGB tones = three_tone(24);
  SegmentMap a = segment(tones, 4, 123);
  SegmentMap b = segment(tones, 4, 123);
  CHECK(a.labels == b.labels);
}

TEST_CASE("alignment: coincident boundary scores one, k=1 zeroes the planes") {
  const size_t n = 32;
  ImageRGB img(n, n);
  for (size_t y = 0; y < n; ++y)
    for (size_t x = 0; x < n; ++x) {
      uint8_t* px = img.px(x, y);
      px[0] = px[1] = px[2] = x < n / 2 ? 30 : 220;
    }
  SegmentMap seg{n, n, 2, std::vector<int>(n * n)};
  for (size_t y = 0; y < n; ++y)
    for (size_t x = 0; x < n; ++x) seg.labels[y * n + x] = x < n / 2 ? 0 : 1;
  Graph g;
  g.set_recording(false);
  MidFeatures f = compute_mid_features(g, image_to_tensor(img), seg);
  CHECK(mean_boundary_alignment(f) == doctest::Approx(1.0).epsilon(1e-12));

  SegmentMap flat{n, n, 1, std::vector<int>(n * n, 0)};
  MidFeatures f1 = compute_mid_features(g, image_to_tensor(img), flat);
  for (size_t i = 0; i < n * n; ++i) {
    CHECK(f1.stack[i * 5 + 3] == 0.0);
    CHECK(f1.stack[i * 5 + 4] == 0.0);
  }
}

TEST_CASE("alignment drops when the splice seam is feathered away") {
  const size_t n = 64;
  auto textured = [&](bool feather) {
    ImageRGB img(n, n);
    Rng noise(99);  // same texture for both variants
    for (size_t y = 0; y < n; ++y)
      for (size_t x = 0; x < n; ++x) {
        const double v = 110.0 + noise.uniform(-55.0, 55.0);
        uint8_t* px = img.px(x, y);
        px[0] = px[1] = px[2] = clamp_u8(v);
      }
    // paste a bright rectangle
    for (size_t y = 20; y < 44; ++y)
      for (size_t x = 20; x < 44; ++x) {
        uint8_t* px = img.px(x, y);
        px[0] = px[1] = px[2] = 235;
      }
    if (feather) {
      // blur a band around the seam, leaving the texture untouched
      ImageRGB blurred = gaussian_blur(img, 2.0);
      for (size_t y = 16; y < 48; ++y)
        for (size_t x = 16; x < 48; ++x) {
          const bool inner = x >= 24 && x < 40 && y >= 24 && y < 40;
          if (!inner)
            for (int c = 0; c < 3; ++c) img.px(x, y)[c] = blurred.px(x, y)[c];
        }
    }
    return img;
  };
  SegmentMap seg{n, n, 2, std::vector<int>(n * n, 0)};
  for (size_t y = 20; y < 44; ++y)
    for (size_t x = 20; x < 44; ++x) seg.labels[y * n + x] = 1;
  Graph g;
  g.set_recording(false);
  MidFeatures sharp = compute_mid_features(g, image_to_tensor(textured(false)), seg);
  MidFeatures soft = compute_mid_features(g, image_to_tensor(textured(true)), seg);
  CHECK(mean_boundary_alignment(soft) < mean_boundary_alignment(sharp));
}

TEST_CASE("mid branch tokens pass gradient checks through the learned layers") {
  Rng rng(21);
  MidBranchParams p = make_mid_params(rng);
  ImageRGB img(16, 16);
  Rng irng(5);
  for (auto& b : img.pixels) b = static_cast<uint8_t>(irng.below(256));
  SegmentMap seg = segment(img, 3, 4);
  Tensor img_t = image_to_tensor(img);
  Graph g0;
  g0.set_recording(false);
  MidFeatures feat = compute_mid_features(g0, img_t, seg);

  Tensor w({2 * 2 * 256, 1});
  for (size_t i = 0; i < w.size(); ++i) w[i] = irng.uniform(-1.0, 1.0);
  auto through_conv = [&](Graph& g, const Tensor& t) {
    MidBranchParams q = p;
    q.conv = t;
    Tensor tokens = mid_branch_forward(g, feat, q, 2);
    Tensor flat = ff::ops::reshape(g, tokens, {1, 2 * 2 * 256});
    return ff::ops::pick(g, ff::ops::matmul(g, flat, w), 0);
  };
  CHECK(finite_diff_check(through_conv, p.conv.clone(), 1e-5, 200, 3) < 1e-5);

  auto through_proj = [&](Graph& g, const Tensor& t) {
    MidBranchParams q = p;
    q.proj_w = t;
    Tensor tokens = mid_branch_forward(g, feat, q, 2);
    Tensor flat = ff::ops::reshape(g, tokens, {1, 2 * 2 * 256});
    return ff::ops::pick(g, ff::ops::matmul(g, flat, w), 0);
  };
  CHECK(finite_diff_check(through_proj, p.proj_w.clone(), 1e-5, 200, 4) < 1e-5);

  // differentiable image path (sobel / LoG / alignment channels)
  auto through_image = [&](Graph& g, const Tensor& t) {
    MidFeatures f = compute_mid_features(g, t, seg);
    Tensor tokens = mid_branch_forward(g, f, p, 2);
    Tensor flat = ff::ops::reshape(g, tokens, {1, 2 * 2 * 256});
    return ff::ops::pick(g, ff::ops::matmul(g, flat, w), 0);
  };
  CHECK(finite_diff_check(through_image, img_t, 1e-6, 120, 5) < 1e-4);
}
