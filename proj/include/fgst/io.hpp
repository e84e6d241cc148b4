#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fgst/tensor.hpp"

namespace fgst {

// Raw tensor container: "FGT1" magic, u32 rank, rank u64 extents, then
// row-major f64 payload. All fields little-endian; round-trips bit-exact.
namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<unsigned char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b;
  is.read(reinterpret_cast<char*>(b.data()), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b;
  is.read(reinterpret_cast<char*>(b.data()), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

inline double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

inline void write_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_tensor: cannot open " + path);
  os.write("FGT1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape) detail::put_u64(os, e);
  for (double v : t.data) detail::put_f64(os, v);
  if (!os) throw std::runtime_error("write_tensor: write failed for " + path);
}

inline TensorPtr read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_tensor: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FGT1", 4) != 0)
    throw std::runtime_error("read_tensor: bad magic in " + path);
  std::uint32_t rank = detail::get_u32(is);
  if (!is || rank > 8) throw std::runtime_error("read_tensor: bad rank in " + path);
  Shape shape(rank);
  for (auto& e : shape) {
    e = static_cast<std::size_t>(detail::get_u64(is));
    if (!is || e == 0) throw std::runtime_error("read_tensor: bad extent in " + path);
  }
  auto t = make_tensor(shape);
  for (auto& v : t->data) v = detail::get_f64(is);
  if (!is) throw std::runtime_error("read_tensor: truncated payload in " + path);
  return t;
}

// 8-bit binary PPM (P6). Values are clamped to [0,1] and quantized on write;
// read returns [3,H,W] in [0,1].
inline void write_ppm(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.shape[0] != 3)
    throw std::invalid_argument("write_ppm: expected [3,H,W], got " + shape_str(img.shape));
  std::size_t h = img.shape[1], w = img.shape[2];
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = std::clamp(img.at3(c, y, x), 0.0, 1.0);
        row[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw std::runtime_error("write_ppm: write failed for " + path);
}

inline TensorPtr read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
  std::size_t w = 0, h = 0;
  int maxval = 0;
  is >> w >> h >> maxval;
  if (!is || w == 0 || h == 0 || maxval != 255)
    throw std::runtime_error("read_ppm: bad header in " + path);
  is.get();
  auto img = make_tensor({3, h, w});
  std::vector<unsigned char> row(w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!is) throw std::runtime_error("read_ppm: truncated pixel data in " + path);
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img->at3(c, y, x) = row[x * 3 + c] / 255.0;
  }
  return img;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_text_file: cannot open " + path);
  os << text;
  if (!os) throw std::runtime_error("write_text_file: write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_text_file: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace fgst
