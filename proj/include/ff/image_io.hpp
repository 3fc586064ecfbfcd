#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ff/error.hpp"
#include "ff/image.hpp"

namespace ff {

namespace detail_io {

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path);
}

inline void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& data) {
  put_be32(out, static_cast<uint32_t>(data.size()));
  const size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_pos, static_cast<uInt>(4 + data.size()));
  put_be32(out, static_cast<uint32_t>(crc));
}

// raw: interleaved samples, `channels` bytes per pixel
inline std::vector<uint8_t> encode_png(const uint8_t* raw, size_t w, size_t h, size_t channels) {
  std::vector<uint8_t> scan((w * channels + 1) * h);
  for (size_t y = 0; y < h; ++y) {
    scan[y * (w * channels + 1)] = 0;  // filter: None
    std::memcpy(scan.data() + y * (w * channels + 1) + 1, raw + y * w * channels, w * channels);
  }
  uLongf bound = compressBound(static_cast<uLong>(scan.size()));
  std::vector<uint8_t> z(bound);
  if (compress2(z.data(), &bound, scan.data(), static_cast<uLong>(scan.size()), 6) != Z_OK)
    throw IoError("png: deflate failed");
  z.resize(bound);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(w));
  put_be32(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);                                    // bit depth
  ihdr.push_back(channels == 3 ? 2 : 0);                // color type: RGB or gray
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", z);
  png_chunk(out, "IEND", {});
  return out;
}

inline uint8_t paeth(uint8_t a, uint8_t b, uint8_t c) {
  const int p = static_cast<int>(a) + static_cast<int>(b) - static_cast<int>(c);
  const int pa = std::abs(p - static_cast<int>(a));
  const int pb = std::abs(p - static_cast<int>(b));
  const int pc = std::abs(p - static_cast<int>(c));
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

struct DecodedPng {
  size_t width = 0, height = 0, channels = 0;
  std::vector<uint8_t> samples;
};

inline DecodedPng decode_png(const std::vector<uint8_t>& bytes, const std::string& path) {
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw FormatError("not a PNG file: " + path);
  size_t pos = 8;
  DecodedPng png;
  std::vector<uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 12 <= bytes.size()) {
    const uint32_t len = get_be32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw FormatError("truncated PNG chunk: " + path);
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* data = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw FormatError("bad IHDR: " + path);
      png.width = get_be32(data);
      png.height = get_be32(data + 4);
      const uint8_t depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8) throw FormatError("unsupported PNG bit depth (need 8): " + path);
      if (color == 0)
        png.channels = 1;
      else if (color == 2)
        png.channels = 3;
      else
        throw FormatError("unsupported PNG color type (need gray or RGB): " + path);
      if (interlace != 0) throw FormatError("interlaced PNG unsupported: " + path);
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend) throw FormatError("truncated PNG: " + path);
  const size_t stride = png.width * png.channels;
  std::vector<uint8_t> scan((stride + 1) * png.height);
  uLongf out_len = static_cast<uLongf>(scan.size());
  const int rc = uncompress(scan.data(), &out_len, idat.data(), static_cast<uLong>(idat.size()));
  if (rc != Z_OK || out_len != scan.size()) throw FormatError("corrupt PNG image data: " + path);

  png.samples.resize(stride * png.height);
  const size_t bpp = png.channels;
  for (size_t y = 0; y < png.height; ++y) {
    const uint8_t filter = scan[y * (stride + 1)];
    const uint8_t* src = scan.data() + y * (stride + 1) + 1;
    uint8_t* dst = png.samples.data() + y * stride;
    const uint8_t* up = y > 0 ? png.samples.data() + (y - 1) * stride : nullptr;
    for (size_t i = 0; i < stride; ++i) {
      const uint8_t a = i >= bpp ? dst[i - bpp] : 0;
      const uint8_t b = up ? up[i] : 0;
      const uint8_t c = (up && i >= bpp) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw FormatError("bad PNG filter type: " + path);
      }
      dst[i] = static_cast<uint8_t>(v & 0xff);
    }
  }
  return png;
}

inline bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// PNM header token reader (handles whitespace and # comments)
inline size_t pnm_token(const std::vector<uint8_t>& b, size_t& pos, const std::string& path) {
  while (pos < b.size()) {
    if (std::isspace(b[pos])) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) throw FormatError("bad PNM header: " + path);
  size_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + (b[pos++] - '0');
  return v;
}

struct DecodedPnm {
  size_t width = 0, height = 0, channels = 0;
  std::vector<uint8_t> samples;
};

inline DecodedPnm decode_pnm(const std::vector<uint8_t>& b, const std::string& path) {
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6'))
    throw FormatError("not a binary PGM/PPM file: " + path);
  DecodedPnm out;
  out.channels = b[1] == '6' ? 3 : 1;
  size_t pos = 2;
  out.width = pnm_token(b, pos, path);
  out.height = pnm_token(b, pos, path);
  const size_t maxval = pnm_token(b, pos, path);
  if (maxval != 255) throw FormatError("PNM maxval must be 255: " + path);
  ++pos;  // single whitespace after maxval
  const size_t need = out.width * out.height * out.channels;
  if (b.size() < pos + need) throw FormatError("truncated PNM payload: " + path);
  out.samples.assign(b.begin() + static_cast<long>(pos), b.begin() + static_cast<long>(pos + need));
  return out;
}

}  // namespace detail_io

// Supported formats: PNG (8-bit gray/RGB), binary PPM (P6), binary PGM (P5).
// Gray sources are replicated into the three channels.
inline ImageRGB load_image(const std::string& path) {
  auto bytes = detail_io::read_file(path);
  size_t w = 0, h = 0, ch = 0;
  std::vector<uint8_t> samples;
  if (bytes.size() >= 8 && bytes[0] == 0x89) {
    auto png = detail_io::decode_png(bytes, path);
    w = png.width; h = png.height; ch = png.channels;
    samples = std::move(png.samples);
  } else if (bytes.size() >= 2 && bytes[0] == 'P') {
    auto pnm = detail_io::decode_pnm(bytes, path);
    w = pnm.width; h = pnm.height; ch = pnm.channels;
    samples = std::move(pnm.samples);
  } else {
    throw FormatError("unsupported image format: " + path);
  }
  if (w < kMinImageSide || h < kMinImageSide)
    throw FormatError("image dimensions below minimum of 8: " + path);
  ImageRGB img(w, h);
  if (ch == 3) {
    img.pixels = std::move(samples);
  } else {
    for (size_t i = 0; i < w * h; ++i)
      img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = samples[i];
  }
  return img;
}

// Gray-plane loader ([0,1] values) for masks and depth maps.
inline ImagePlane load_plane(const std::string& path) {
  auto bytes = detail_io::read_file(path);
  size_t w = 0, h = 0;
  std::vector<uint8_t> samples;
  if (bytes.size() >= 8 && bytes[0] == 0x89) {
    auto png = detail_io::decode_png(bytes, path);
    if (png.channels != 1) throw FormatError("expected a grayscale image: " + path);
    w = png.width; h = png.height;
    samples = std::move(png.samples);
  } else if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
    auto pnm = detail_io::decode_pnm(bytes, path);
    w = pnm.width; h = pnm.height;
    samples = std::move(pnm.samples);
  } else {
    throw FormatError("expected PGM or grayscale PNG: " + path);
  }
  if (w < kMinImageSide || h < kMinImageSide)
    throw FormatError("image dimensions below minimum of 8: " + path);
  ImagePlane p(w, h);
  for (size_t i = 0; i < w * h; ++i) p.values[i] = static_cast<double>(samples[i]) / 255.0;
  return p;
}

// Integer label map from a PGM/gray PNG: label = gray value, must be < 19.
inline std::vector<int> load_label_map(const std::string& path, size_t expect_w, size_t expect_h) {
  auto bytes = detail_io::read_file(path);
  size_t w = 0, h = 0;
  std::vector<uint8_t> samples;
  if (bytes.size() >= 8 && bytes[0] == 0x89) {
    auto png = detail_io::decode_png(bytes, path);
    if (png.channels != 1) throw FormatError("label map must be grayscale: " + path);
    w = png.width; h = png.height;
    samples = std::move(png.samples);
  } else {
    auto pnm = detail_io::decode_pnm(bytes, path);
    if (pnm.channels != 1) throw FormatError("label map must be PGM: " + path);
    w = pnm.width; h = pnm.height;
    samples = std::move(pnm.samples);
  }
  if (w != expect_w || h != expect_h)
    throw DimensionError("label map size mismatch for " + path);
  std::vector<int> labels(w * h);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (samples[i] >= 19) throw FormatError("label value out of range [0,19): " + path);
    labels[i] = samples[i];
  }
  return labels;
}

inline void save_image(const ImageRGB& img, const std::string& path) {
  if (img.width < kMinImageSide || img.height < kMinImageSide)
    throw ContractError("save_image: dimensions below minimum of 8");
  if (detail_io::has_suffix(path, ".ppm")) {
    std::vector<uint8_t> out;
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                         "\n255\n";
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    detail_io::write_file(path, out);
  } else if (detail_io::has_suffix(path, ".png")) {
    detail_io::write_file(path, detail_io::encode_png(img.pixels.data(), img.width, img.height, 3));
  } else {
    throw FormatError("save_image: unsupported extension (use .png or .ppm): " + path);
  }
}

inline void save_plane(const ImagePlane& p, const std::string& path) {
  if (p.width < kMinImageSide || p.height < kMinImageSide)
    throw ContractError("save_plane: dimensions below minimum of 8");
  std::vector<uint8_t> gray(p.width * p.height);
  for (size_t i = 0; i < gray.size(); ++i) gray[i] = clamp_u8(p.values[i] * 255.0);
  if (detail_io::has_suffix(path, ".pgm")) {
    std::vector<uint8_t> out;
    std::string header = "P5\n" + std::to_string(p.width) + " " + std::to_string(p.height) +
                         "\n255\n";
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), gray.begin(), gray.end());
    detail_io::write_file(path, out);
  } else if (detail_io::has_suffix(path, ".png")) {
    detail_io::write_file(path, detail_io::encode_png(gray.data(), p.width, p.height, 1));
  } else {
    throw FormatError("save_plane: unsupported extension (use .png or .pgm): " + path);
  }
}

}  // namespace ff
