#pragma once

// RGB images in [0,1], binary PPM (P6) output and single-channel PFM depth.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "strata/geometry.hpp"

namespace strata {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;  // row-major, 3 values per pixel, row 0 at the top

  Image() = default;
  Image(int w, int h, const Vec3& fill = Vec3::Zero()) : width(w), height(h), rgb(3 * std::size_t(w) * h) {
    for (std::size_t i = 0; i < pixel_count(); ++i) set(i, fill);
  }

  std::size_t pixel_count() const { return std::size_t(width) * height; }
  Vec3 get(std::size_t i) const { return Vec3(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]); }
  Vec3 get(int x, int y) const { return get(std::size_t(y) * width + x); }
  void set(std::size_t i, const Vec3& c) {
    rgb[3 * i] = c[0];
    rgb[3 * i + 1] = c[1];
    rgb[3 * i + 2] = c[2];
  }
  void set(int x, int y, const Vec3& c) { set(std::size_t(y) * width + x, c); }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

/// Single-channel float map (depth).
struct ScalarMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  ScalarMap() = default;
  ScalarMap(int w, int h, double fill = 0.0) : width(w), height(h), values(std::size_t(w) * h, fill) {}
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.rgb.size());
  for (double v : img.rgb) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) { write_file(path, encode_ppm(img)); }

namespace detail {

/// Reads the whitespace-separated header tokens of a netpbm-style file and
/// returns the payload offset (one whitespace byte after the last token).
inline std::size_t read_header(const std::string& bytes, int count, std::vector<std::string>& tokens) {
  std::size_t pos = 0;
  while (static_cast<int>(tokens.size()) < count) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw std::runtime_error("truncated image header");
    tokens.push_back(bytes.substr(start, pos - start));
  }
  return pos + 1;
}

}  // namespace detail

inline Image decode_ppm(const std::string& bytes) {
  std::vector<std::string> tok;
  const std::size_t off = detail::read_header(bytes, 4, tok);
  if (tok[0] != "P6") throw std::runtime_error("not a binary PPM");
  const int w = std::stoi(tok[1]), h = std::stoi(tok[2]), maxval = std::stoi(tok[3]);
  if (maxval != 255) throw std::runtime_error("unsupported PPM maxval " + tok[3]);
  Image img(w, h);
  if (bytes.size() < off + img.rgb.size()) throw std::runtime_error("truncated PPM payload");
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    img.rgb[i] = static_cast<unsigned char>(bytes[off + i]) / 255.0;
  }
  return img;
}

inline Image read_ppm(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("image not found: " + path.string());
  return decode_ppm(read_file(path));
}

/// Little-endian greyscale PFM (scale -1); rows are stored bottom to top.
inline std::string encode_pfm(const ScalarMap& map) {
  std::string out = "Pf\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n-1.0\n";
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x) {
      const float v = static_cast<float>(map.values[std::size_t(y) * map.width + x]);
      char b[4];
      std::memcpy(b, &v, 4);
      out.append(b, 4);
    }
  }
  return out;
}

inline ScalarMap decode_pfm(const std::string& bytes) {
  std::vector<std::string> tok;
  const std::size_t off = detail::read_header(bytes, 4, tok);
  if (tok[0] != "Pf") throw std::runtime_error("not a greyscale PFM");
  const int w = std::stoi(tok[1]), h = std::stoi(tok[2]);
  if (std::stod(tok[3]) >= 0) throw std::runtime_error("only little-endian PFM is supported");
  ScalarMap m(w, h);
  if (bytes.size() < off + 4 * m.values.size()) throw std::runtime_error("truncated PFM payload");
  std::size_t p = off;
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x, p += 4) {
      float v;
      std::memcpy(&v, bytes.data() + p, 4);
      m.values[std::size_t(y) * w + x] = v;
    }
  }
  return m;
}

inline void write_pfm(const std::filesystem::path& path, const ScalarMap& map) { write_file(path, encode_pfm(map)); }

}  // namespace strata
