#pragma once

// Binary Netpbm codecs: P6 (RGB), P5 (gray), and PFM "Pf" (gray float).

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "obsnet/error.hpp"
#include "obsnet/fsutil.hpp"

namespace obsnet::pnm {

struct Gray8 {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, top row first
};

struct Rgb8 {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major, top row first
};

struct GrayF {
  std::size_t width = 0, height = 0;
  std::vector<float> pixels;  // row-major, top row first
};

namespace detail {

class HeaderReader {
 public:
  explicit HeaderReader(const std::string& bytes) : b_(bytes) {}

  std::string token(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < b_.size() && !std::isspace(static_cast<unsigned char>(b_[pos_]))) ++pos_;
    if (pos_ == start) fail(std::string("expected ") + what, start);
    return b_.substr(start, pos_ - start);
  }

  std::size_t number(const char* what) {
    const std::size_t at = pos_;
    const std::string t = token(what);
    std::size_t v = 0;
    for (char ch : t) {
      if (!std::isdigit(static_cast<unsigned char>(ch))) fail(std::string("malformed ") + what, at);
      v = v * 10 + static_cast<std::size_t>(ch - '0');
      if (v > (1u << 24)) fail(std::string("oversized ") + what, at);
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from the payload.
  std::size_t payload_start() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_])))
      fail("missing whitespace before payload", pos_);
    return pos_ + 1;
  }

  std::size_t pos() const noexcept { return pos_; }

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw ParseError("netpbm: " + msg + " at byte offset " + std::to_string(at));
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

inline std::string header(const char* magic, std::size_t w, std::size_t h, const char* third) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n" + third + "\n";
}

}  // namespace detail

inline std::string encode_ppm(const Rgb8& img) {
  std::string out = detail::header("P6", img.width, img.height, "255");
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline std::string encode_pgm(const Gray8& img) {
  std::string out = detail::header("P5", img.width, img.height, "255");
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

// Little-endian grayscale PFM (scale -1.0); rows stored bottom to top.
inline std::string encode_pfm(const GrayF& img) {
  std::string out = detail::header("Pf", img.width, img.height, "-1.0");
  out.reserve(out.size() + img.pixels.size() * 4);
  for (std::size_t y = img.height; y-- > 0;) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(img.pixels[y * img.width + x]);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
  }
  return out;
}

namespace detail {

template <class Out>
Out decode_8bit(const std::string& bytes, const char* magic, std::size_t channels) {
  HeaderReader r(bytes);
  if (r.token("magic") != magic) r.fail(std::string("bad magic, expected ") + magic, 0);
  Out img;
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t maxval_at = r.pos();
  if (r.number("maxval") != 255) r.fail("unsupported maxval (only 255)", maxval_at);
  const std::size_t start = r.payload_start();
  const std::size_t n = img.width * img.height * channels;
  if (bytes.size() - start != n)
    r.fail("payload has " + std::to_string(bytes.size() - start) + " bytes, expected " + std::to_string(n), start);
  img.pixels.assign(bytes.begin() + static_cast<long>(start), bytes.end());
  return img;
}

}  // namespace detail

inline Rgb8 decode_ppm(const std::string& bytes) { return detail::decode_8bit<Rgb8>(bytes, "P6", 3); }
inline Gray8 decode_pgm(const std::string& bytes) { return detail::decode_8bit<Gray8>(bytes, "P5", 1); }

inline GrayF decode_pfm(const std::string& bytes) {
  detail::HeaderReader r(bytes);
  if (r.token("magic") != "Pf") r.fail("bad magic, expected Pf", 0);
  GrayF img;
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t scale_at = r.pos();
  const std::string scale = r.token("scale");
  if (scale.empty() || scale[0] != '-') r.fail("only little-endian PFM (negative scale) is supported", scale_at);
  const std::size_t start = r.payload_start();
  const std::size_t n = img.width * img.height;
  if (bytes.size() - start != n * 4)
    r.fail("payload has " + std::to_string(bytes.size() - start) + " bytes, expected " + std::to_string(n * 4), start);
  img.pixels.resize(n);
  std::size_t pos = start;
  for (std::size_t y = img.height; y-- > 0;) {
    for (std::size_t x = 0; x < img.width; ++x, pos += 4) {
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
      img.pixels[y * img.width + x] = std::bit_cast<float>(bits);
    }
  }
  return img;
}

inline void write_ppm(const std::filesystem::path& p, const Rgb8& img) { write_file_atomic(p, encode_ppm(img)); }
inline void write_pgm(const std::filesystem::path& p, const Gray8& img) { write_file_atomic(p, encode_pgm(img)); }
inline void write_pfm(const std::filesystem::path& p, const GrayF& img) { write_file_atomic(p, encode_pfm(img)); }

inline Rgb8 read_ppm(const std::filesystem::path& p) { return decode_ppm(read_file(p)); }
inline Gray8 read_pgm(const std::filesystem::path& p) { return decode_pgm(read_file(p)); }
inline GrayF read_pfm(const std::filesystem::path& p) { return decode_pfm(read_file(p)); }

}  // namespace obsnet::pnm
