#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ff/branch_low.hpp"
#include "ff/image.hpp"
#include "ff/image_io.hpp"
#include "ff/rng.hpp"

namespace ff {

enum class Manipulation : int {
  Real = 0,
  CopyMove = 1,
  Splicing = 2,
  Retouching = 3,
  Gan = 4,
  Diffusion = 5,
  Deepfake = 6,
};

constexpr size_t kNumClasses = 7;

inline const char* manipulation_name(int type) {
  static const char* names[kNumClasses] = {"real",       "copy-move", "splicing", "retouching",
                                           "gan",        "diffusion", "deepfake"};
  if (type < 0 || type >= static_cast<int>(kNumClasses)) throw ContractError("bad type index");
  return names[static_cast<size_t>(type)];
}

struct SampleMeta {
  long x0 = -1, y0 = -1, x1 = -1, y1 = -1;  // paste rect, when applicable
  size_t axis_row = 0;
  uint64_t seed = 0;
};

struct ForgerySample {
  ImageRGB image;
  ImagePlane mask;  // binary {0,1}
  int label = 0;    // 0 real, 1 fake
  int mtype = 0;    // Manipulation
  SampleMeta meta;
};

// ---------------------------------------------------------------------------
// procedural texture machinery (all f64, quantized to u8 at the very end)
// ---------------------------------------------------------------------------
namespace detail_gen {

struct Rgb {
  double r, g, b;
};

struct FloatImage {
  size_t n = 0;
  std::vector<double> px;  // 3 per pixel
  explicit FloatImage(size_t size) : n(size), px(3 * size * size, 0.0) {}
  double* at(size_t x, size_t y) { return px.data() + 3 * (y * n + x); }
  const double* at(size_t x, size_t y) const { return px.data() + 3 * (y * n + x); }
};

// value noise: coarse grid of uniforms, bilinearly upsampled
inline std::vector<double> value_noise(size_t size, size_t grid, double amp, Rng& rng) {
  ImagePlane coarse(grid, grid);
  for (auto& v : coarse.values) v = rng.uniform(-amp, amp);
  ImagePlane up = resize_bilinear(coarse, size, size);
  return up.values;
}

inline FloatImage base_texture(size_t size, Rng& rng) {
  FloatImage img(size);
  const Rgb c0{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
  const Rgb c1{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
  const double theta = rng.uniform(0.0, 6.283185307179586);
  const double dx = std::cos(theta), dy = std::sin(theta);
  // projection range for normalization
  double lo = 1e300, hi = -1e300;
  for (size_t y = 0; y < size; ++y)
    for (size_t x = 0; x < size; ++x) {
      const double t = dx * static_cast<double>(x) + dy * static_cast<double>(y);
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  const double span = hi > lo ? hi - lo : 1.0;
  for (size_t y = 0; y < size; ++y)
    for (size_t x = 0; x < size; ++x) {
      const double t = (dx * static_cast<double>(x) + dy * static_cast<double>(y) - lo) / span;
      double* p = img.at(x, y);
      p[0] = c0.r + t * (c1.r - c0.r);
      p[1] = c0.g + t * (c1.g - c0.g);
      p[2] = c0.b + t * (c1.b - c0.b);
    }
  // two octaves of luminance value noise
  auto oct1 = value_noise(size, 4, 0.12, rng);
  auto oct2 = value_noise(size, 8, 0.06, rng);
  for (size_t i = 0; i < size * size; ++i) {
    const double v = oct1[i] + oct2[i];
    img.px[3 * i] += v;
    img.px[3 * i + 1] += v;
    img.px[3 * i + 2] += v;
  }
  // a few solid shapes so edges, segmentation and shadow analysis have work
  const int shapes = 2 + static_cast<int>(rng.below(2));
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = rng.below(2) == 0;
    const Rgb col{rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92)};
    const double cx = rng.uniform(0.15, 0.85) * static_cast<double>(size);
    const double cy = rng.uniform(0.15, 0.85) * static_cast<double>(size);
    const double ax = rng.uniform(0.08, 0.22) * static_cast<double>(size);
    const double ay = rng.uniform(0.08, 0.22) * static_cast<double>(size);
    for (size_t y = 0; y < size; ++y)
      for (size_t x = 0; x < size; ++x) {
        const double ux = (static_cast<double>(x) - cx) / ax;
        const double uy = (static_cast<double>(y) - cy) / ay;
        const bool inside = ellipse ? (ux * ux + uy * uy <= 1.0)
                                    : (std::fabs(ux) <= 1.0 && std::fabs(uy) <= 1.0);
        if (inside) {
          double* p = img.at(x, y);
          p[0] = col.r;
          p[1] = col.g;
          p[2] = col.b;
        }
      }
  }
  // fine per-pixel noise, the spectral fingerprint of "camera" texture
  const double af = rng.uniform(0.03, 0.06);
  for (double& v : img.px) v += rng.uniform(-af, af);
  for (double& v : img.px) v = std::clamp(v, 0.02, 0.98);
  return img;
}

inline ImageRGB quantize(const FloatImage& f) {
  ImageRGB img(f.n, f.n);
  for (size_t i = 0; i < f.px.size(); ++i) img.pixels[i] = clamp_u8(f.px[i] * 255.0);
  return img;
}

// one-level Haar attenuation of the high-frequency subbands, per channel
inline void suppress_high_frequency(FloatImage& img, double factor) {
  const size_t n = img.n;
  ImagePlane ch(n, n);
  for (size_t c = 0; c < 3; ++c) {
    for (size_t i = 0; i < n * n; ++i) ch.values[i] = img.px[3 * i + c];
    HaarSubbands s = haar_dwt(ch);
    for (auto& v : s.lh.values) v *= factor;
    for (auto& v : s.hl.values) v *= factor;
    for (auto& v : s.hh.values) v *= factor;
    ImagePlane rec = haar_reconstruct(s);
    for (size_t i = 0; i < n * n; ++i) img.px[3 * i + c] = std::clamp(rec.values[i], 0.0, 1.0);
  }
}

inline void blur_float(FloatImage& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  std::vector<double> ch(img.n * img.n);
  for (size_t c = 0; c < 3; ++c) {
    for (size_t i = 0; i < ch.size(); ++i) ch[i] = img.px[3 * i + c];
    detail_img::blur_field(ch, img.n, img.n, k);
    for (size_t i = 0; i < ch.size(); ++i) img.px[3 * i + c] = ch[i];
  }
}

struct Rect {
  size_t x0, y0, x1, y1;  // half-open
};

inline Rect random_rect(size_t size, Rng& rng, double min_frac, double max_frac) {
  const size_t w = static_cast<size_t>(rng.uniform(min_frac, max_frac) * static_cast<double>(size));
  const size_t h = static_cast<size_t>(rng.uniform(min_frac, max_frac) * static_cast<double>(size));
  const size_t x0 = rng.below(size - w);
  const size_t y0 = rng.below(size - h);
  return {x0, y0, x0 + w, y0 + h};
}

inline bool overlap(const Rect& a, const Rect& b) {
  return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
}

}  // namespace detail_gen

// Procedural forgery sample: one deterministic image per (seed, class, index).
// real        layered gradient/noise texture with a few solid shapes
// copy-move   a rectangle duplicated within the image
// splicing    a rectangle pasted from an independently generated image
// retouching  local blur + brightening inside a rectangle
// gan         global high-frequency suppression (full-frame mask)
// diffusion   heavy smoothing plus re-injected fine uniform noise (full frame)
// deepfake    warped ellipse from a donor image, upper-center region
inline ForgerySample make_sample(Manipulation kind, size_t size, uint64_t sample_seed) {
  using namespace detail_gen;
  Rng rng(sample_seed);
  FloatImage base = base_texture(size, rng);
  ForgerySample s;
  s.mask = ImagePlane(size, size, 0.0);
  s.mtype = static_cast<int>(kind);
  s.label = kind == Manipulation::Real ? 0 : 1;
  s.meta.seed = sample_seed;
  s.meta.axis_row = size / 2;

  switch (kind) {
    case Manipulation::Real:
      break;
    case Manipulation::CopyMove: {
      // pick a placement where source and destination content actually
      // differ, and apply the mild photometric adjustment real copy-move
      // blending leaves behind; otherwise the paste can be invisible
      Rect src = random_rect(size, rng, 0.25, 0.4);
      Rect dst = src;
      bool placed = false;
      for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        dst = random_rect(size, rng, 0.25, 0.4);
        dst.x1 = dst.x0 + (src.x1 - src.x0);
        dst.y1 = dst.y0 + (src.y1 - src.y0);
        if (dst.x1 > size || dst.y1 > size || overlap(src, dst)) continue;
        double diff = 0.0;
        for (size_t y = 0; y < src.y1 - src.y0; ++y)
          for (size_t x = 0; x < src.x1 - src.x0; ++x)
            for (int c = 0; c < 3; ++c)
              diff += std::fabs(base.at(src.x0 + x, src.y0 + y)[c] -
                                base.at(dst.x0 + x, dst.y0 + y)[c]);
        diff /= 3.0 * static_cast<double>((src.x1 - src.x0) * (src.y1 - src.y0));
        placed = diff >= 0.05;
      }
      if (!placed) {
        const size_t w = src.x1 - src.x0, h = src.y1 - src.y0;
        dst = {size - w, size - h, size, size};
        if (overlap(src, dst)) dst = {0, 0, w, h};
      }
      const double gain = rng.below(2) == 0 ? rng.uniform(1.08, 1.18) : rng.uniform(0.85, 0.93);
      for (size_t y = 0; y < src.y1 - src.y0; ++y)
        for (size_t x = 0; x < src.x1 - src.x0; ++x) {
          const double* from = base.at(src.x0 + x, src.y0 + y);
          double* to = base.at(dst.x0 + x, dst.y0 + y);
          for (int c = 0; c < 3; ++c) to[c] = std::clamp(from[c] * gain, 0.0, 1.0);
          s.mask.at(dst.x0 + x, dst.y0 + y) = 1.0;
        }
      s.meta = {static_cast<long>(dst.x0), static_cast<long>(dst.y0), static_cast<long>(dst.x1),
                static_cast<long>(dst.y1), size / 2, sample_seed};
      break;
    }
    case Manipulation::Splicing: {
      // donor patches keep their own noise field and carry the photometric
      // mismatch characteristic of cross-image pastes
      FloatImage donor = base_texture(size, rng);
      Rect r = random_rect(size, rng, 0.28, 0.42);
      double shift[3];
      for (double& v : shift) {
        v = rng.uniform(0.06, 0.12);
        if (rng.below(2) == 0) v = -v;
      }
      for (size_t y = r.y0; y < r.y1; ++y)
        for (size_t x = r.x0; x < r.x1; ++x) {
          const double* from = donor.at(x, y);
          double* to = base.at(x, y);
          for (int c = 0; c < 3; ++c) to[c] = std::clamp(from[c] + shift[c], 0.0, 1.0);
          s.mask.at(x, y) = 1.0;
        }
      s.meta = {static_cast<long>(r.x0), static_cast<long>(r.y0), static_cast<long>(r.x1),
                static_cast<long>(r.y1), size / 2, sample_seed};
      break;
    }
    case Manipulation::Retouching: {
      Rect r = random_rect(size, rng, 0.3, 0.45);
      FloatImage blurred = base;
      blur_float(blurred, rng.uniform(1.2, 2.0));
      const double gain = rng.uniform(1.15, 1.35);
      for (size_t y = r.y0; y < r.y1; ++y)
        for (size_t x = r.x0; x < r.x1; ++x) {
          const double* from = blurred.at(x, y);
          double* to = base.at(x, y);
          for (int c = 0; c < 3; ++c) to[c] = std::clamp(from[c] * gain, 0.0, 1.0);
          s.mask.at(x, y) = 1.0;
        }
      s.meta = {static_cast<long>(r.x0), static_cast<long>(r.y0), static_cast<long>(r.x1),
                static_cast<long>(r.y1), size / 2, sample_seed};
      break;
    }
    case Manipulation::Gan: {
      suppress_high_frequency(base, 0.15);
      std::fill(s.mask.values.begin(), s.mask.values.end(), 1.0);
      break;
    }
    case Manipulation::Diffusion: {
      blur_float(base, 2.2);
      for (double& v : base.px) v = std::clamp(v + rng.uniform(-0.02, 0.02), 0.0, 1.0);
      std::fill(s.mask.values.begin(), s.mask.values.end(), 1.0);
      break;
    }
    case Manipulation::Deepfake: {
      FloatImage donor = base_texture(size, rng);
      const double cx = rng.uniform(0.4, 0.6) * static_cast<double>(size);
      const double cy = rng.uniform(0.28, 0.42) * static_cast<double>(size);
      const double ax = rng.uniform(0.13, 0.2) * static_cast<double>(size);
      const double ay = rng.uniform(0.16, 0.24) * static_cast<double>(size);
      const double rot = rng.uniform(-0.25, 0.25);
      const double scale = rng.uniform(1.1, 1.3);
      const double cr = std::cos(rot), sr = std::sin(rot);
      for (size_t y = 0; y < size; ++y)
        for (size_t x = 0; x < size; ++x) {
          const double ux = (static_cast<double>(x) - cx) / ax;
          const double uy = (static_cast<double>(y) - cy) / ay;
          if (ux * ux + uy * uy > 1.0) continue;
          // sample the donor through a small rotation + scale about the center
          const double rx = scale * (cr * (static_cast<double>(x) - cx) -
                                     sr * (static_cast<double>(y) - cy)) + cx;
          const double ry = scale * (sr * (static_cast<double>(x) - cx) +
                                     cr * (static_cast<double>(y) - cy)) + cy;
          const double fx = std::clamp(rx, 0.0, static_cast<double>(size - 1));
          const double fy = std::clamp(ry, 0.0, static_cast<double>(size - 1));
          const size_t ix = static_cast<size_t>(fx), iy = static_cast<size_t>(fy);
          const size_t ix1 = std::min(ix + 1, size - 1), iy1 = std::min(iy + 1, size - 1);
          const double tx = fx - static_cast<double>(ix), ty = fy - static_cast<double>(iy);
          double* to = base.at(x, y);
          for (int c = 0; c < 3; ++c) {
            const double top = donor.at(ix, iy)[c] +
                               tx * (donor.at(ix1, iy)[c] - donor.at(ix, iy)[c]);
            const double bot = donor.at(ix, iy1)[c] +
                               tx * (donor.at(ix1, iy1)[c] - donor.at(ix, iy1)[c]);
            to[c] = top + ty * (bot - top);
          }
          s.mask.at(x, y) = 1.0;
        }
      s.meta = {static_cast<long>(cx - ax), static_cast<long>(cy - ay),
                static_cast<long>(cx + ax), static_cast<long>(cy + ay), size / 2, sample_seed};
      break;
    }
  }
  s.image = detail_gen::quantize(base);
  return s;
}

// class-balanced toy dataset: exactly n_per_class samples per type,
// class-major order, fully determined by the seed
inline std::vector<ForgerySample> gen_toy_dataset(size_t n_per_class, size_t size, uint64_t seed) {
  if (size < 32 || size % 2 != 0) throw ContractError("gen_toy_dataset: size must be even and >= 32");
  if (n_per_class < 1) throw ContractError("gen_toy_dataset: n_per_class must be >= 1");
  std::vector<ForgerySample> out;
  out.reserve(n_per_class * kNumClasses);
  for (size_t cls = 0; cls < kNumClasses; ++cls)
    for (size_t i = 0; i < n_per_class; ++i)
      out.push_back(make_sample(static_cast<Manipulation>(cls), size,
                                derive_seed(seed, 0xda7a, cls, i)));
  return out;
}

// Two-class set where only spectral statistics separate the classes. Both
// classes are smooth gradients plus identically distributed fine noise;
// the fake class additionally carries a low-amplitude Nyquist checkerboard
// (the classic generator upsampling artifact). The checkerboard is coherent
// in the HH subband and the highest DCT bin but sits well under the noise
// floor for the edge operators, whose pre-blur wipes it out entirely.
inline std::vector<ForgerySample> gen_spectral_dataset(size_t n_per_class, size_t size,
                                                       uint64_t seed) {
  using namespace detail_gen;
  if (size < 32 || size % 4 != 0)
    throw ContractError("gen_spectral_dataset: size must be a multiple of 4 and >= 32");
  std::vector<ForgerySample> out;
  out.reserve(2 * n_per_class);
  for (int cls = 0; cls < 2; ++cls)
    for (size_t i = 0; i < n_per_class; ++i) {
      Rng rng(derive_seed(seed, 0x59ec, static_cast<uint64_t>(cls), i));
      FloatImage img(size);
      const Rgb c0{rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)};
      const Rgb c1{rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)};
      const double theta = rng.uniform(0.0, 6.283185307179586);
      const double dxn = std::cos(theta), dyn = std::sin(theta);
      for (size_t y = 0; y < size; ++y)
        for (size_t x = 0; x < size; ++x) {
          const double t = 0.5 + 0.5 * (dxn * (static_cast<double>(x) / size - 0.5) +
                                        dyn * (static_cast<double>(y) / size - 0.5));
          double* p = img.at(x, y);
          p[0] = c0.r + t * (c1.r - c0.r);
          p[1] = c0.g + t * (c1.g - c0.g);
          p[2] = c0.b + t * (c1.b - c0.b);
        }
      const double af = rng.uniform(0.04, 0.08);
      for (double& v : img.px) v += rng.uniform(-af, af);
      if (cls == 1) {
        const double amp = rng.uniform(0.015, 0.025);
        for (size_t y = 0; y < size; ++y)
          for (size_t x = 0; x < size; ++x) {
            const double cb = ((x + y) % 2 == 0) ? amp : -amp;
            double* p = img.at(x, y);
            p[0] += cb;
            p[1] += cb;
            p[2] += cb;
          }
      }
      for (double& v : img.px) v = std::clamp(v, 0.02, 0.98);
      ForgerySample s;
      s.image = quantize(img);
      s.mask = ImagePlane(size, size, cls == 0 ? 0.0 : 1.0);
      s.label = cls;
      s.mtype = cls == 0 ? 0 : static_cast<int>(Manipulation::Gan);
      s.meta.seed = derive_seed(seed, 0x59ec, static_cast<uint64_t>(cls), i);
      s.meta.axis_row = size / 2;
      out.push_back(std::move(s));
    }
  return out;
}

// ---------------------------------------------------------------------------
// on-disk layout: images/ masks/ labels.csv (+ metadata.csv)
// ---------------------------------------------------------------------------

inline void save_dataset(const std::vector<ForgerySample>& samples, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::ostringstream labels, meta;
  labels << "filename,label,mtype\n";
  meta << "filename,x0,y0,x1,y1,axis_row,seed\n";
  char name[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "sample_%04zu", i);
    const std::string img_name = std::string(name) + ".png";
    save_image(samples[i].image, (fs::path(dir) / "images" / img_name).string());
    save_plane(samples[i].mask, (fs::path(dir) / "masks" / (std::string(name) + ".pgm")).string());
    labels << img_name << "," << samples[i].label << "," << samples[i].mtype << "\n";
    const SampleMeta& m = samples[i].meta;
    meta << img_name << "," << m.x0 << "," << m.y0 << "," << m.x1 << "," << m.y1 << ","
         << m.axis_row << "," << m.seed << "\n";
  }
  std::ofstream lf(fs::path(dir) / "labels.csv");
  lf << labels.str();
  std::ofstream mf(fs::path(dir) / "metadata.csv");
  mf << meta.str();
  if (!lf || !mf) throw IoError("failed to write dataset index files in " + dir);
}

inline std::vector<ForgerySample> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path labels_path = fs::path(dir) / "labels.csv";
  std::ifstream in(labels_path);
  if (!in) throw IoError("cannot open " + labels_path.string());
  std::string line;
  std::getline(in, line);
  if (line != "filename,label,mtype")
    throw FormatError("labels.csv must start with 'filename,label,mtype': " + labels_path.string());
  std::vector<ForgerySample> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string fname, label_s, mtype_s;
    if (!std::getline(row, fname, ',') || !std::getline(row, label_s, ',') ||
        !std::getline(row, mtype_s))
      throw FormatError("malformed labels.csv row: " + line);
    ForgerySample s;
    s.label = std::stoi(label_s);
    s.mtype = std::stoi(mtype_s);
    if ((s.label != 0 && s.label != 1) || s.mtype < 0 || s.mtype >= static_cast<int>(kNumClasses))
      throw FormatError("label/mtype out of range in labels.csv row: " + line);
    s.image = load_image((fs::path(dir) / "images" / fname).string());
    const std::string stem = fs::path(fname).stem().string();
    const fs::path mask_path = fs::path(dir) / "masks" / (stem + ".pgm");
    if (fs::exists(mask_path)) {
      ImagePlane m = load_plane(mask_path.string());
      if (m.width != s.image.width || m.height != s.image.height)
        throw DimensionError("mask size mismatch for " + fname);
      for (double& v : m.values) v = v >= 0.5 ? 1.0 : 0.0;
      s.mask = std::move(m);
    } else {
      s.mask = ImagePlane(s.image.width, s.image.height, 0.0);
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw FormatError("dataset has no samples: " + dir);
  return out;
}

}  // namespace ff
