#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "obsnet/error.hpp"
#include "obsnet/fsutil.hpp"

namespace obsnet::nd {

template <class T>
struct Param {
  std::vector<std::uint32_t> dims;
  std::vector<T> data;

  std::size_t size() const noexcept { return data.size(); }
  bool operator==(const Param&) const = default;
};

// Named weight arrays of one network, iterated in name order.
template <class T>
class ParamStore {
 public:
  using Map = std::map<std::string, Param<T>>;

  Param<T>& add(const std::string& name, std::vector<std::uint32_t> dims, T fill = T(0)) {
    const std::size_t n =
        std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
    auto& p = params_[name];
    p.dims = std::move(dims);
    p.data.assign(n, fill);
    return p;
  }

  bool contains(const std::string& name) const { return params_.contains(name); }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("parameter '" + name + "' not found");
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("parameter '" + name + "' not found");
    return it->second;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.size();
    return n;
  }

  // Zero-filled store with identical names and shapes.
  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [name, p] : params_) out.add(name, p.dims);
    return out;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) {
      auto& q = out.add(name, p.dims);
      for (std::size_t i = 0; i < p.size(); ++i) q.data[i] = static_cast<U>(p.data[i]);
    }
    return out;
  }

  bool operator==(const ParamStore&) const = default;

 private:
  Map params_;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw ParseError("param store: truncated at byte " + std::to_string(pos));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

// Little-endian "OGW1" container: per record u32 name length, name bytes,
// u32 rank, u32 dims, f32 payload.
inline std::string encode_params(const ParamStore<float>& store) {
  std::string out = "OGW1";
  for (const auto& [name, p] : store) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(p.dims.size()));
    for (auto d : p.dims) detail::put_u32(out, d);
    for (float v : p.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline ParamStore<float> decode_params(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "OGW1") != 0)
    throw ParseError("param store: bad magic at byte 0");
  ParamStore<float> store;
  std::size_t pos = 4;
  while (pos < bytes.size()) {
    const auto name_len = detail::get_u32(bytes, pos);
    if (pos + name_len > bytes.size())
      throw ParseError("param store: truncated name at byte " + std::to_string(pos));
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    const auto rank = detail::get_u32(bytes, pos);
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = detail::get_u32(bytes, pos);
    auto& p = store.add(name, dims);
    for (auto& v : p.data) v = std::bit_cast<float>(detail::get_u32(bytes, pos));
  }
  return store;
}

inline void save_params(const std::filesystem::path& path, const ParamStore<float>& store) {
  write_file_atomic(path, encode_params(store));
}

inline ParamStore<float> load_params(const std::filesystem::path& path) {
  return decode_params(read_file(path));
}

}  // namespace obsnet::nd
