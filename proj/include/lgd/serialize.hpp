#pragma once

// Flat binary tensor records, concatenated:
//   u64 name_len | name bytes | u64 rank | u64 extents[rank] | f64 values[]
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lgd/params.hpp"
#include "lgd/tensor.hpp"

namespace lgd {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw IoError("tensor file: truncated record");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

}  // namespace detail

inline std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::string out;
  for (const auto& [name, t] : tensors) {
    detail::put_u64(out, name.size());
    out += name;
    detail::put_u64(out, t.rank());
    for (auto e : t.shape()) detail::put_u64(out, e);
    for (double v : t.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::vector<NamedTensor> decode_tensors(const std::string& bytes) {
  std::vector<NamedTensor> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto len = detail::get_u64(bytes, pos);
    if (pos + len > bytes.size()) throw IoError("tensor file: truncated name");
    std::string name = bytes.substr(pos, len);
    pos += len;
    const auto rank = detail::get_u64(bytes, pos);
    if (rank > 16) throw IoError("tensor file: implausible rank for " + name);
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(detail::get_u64(bytes, pos));
    const auto n = numel(shape);
    if (pos + 8 * n > bytes.size()) throw IoError("tensor file: truncated values for " + name);
    Buffer values(n);
    for (auto& v : values) v = std::bit_cast<double>(detail::get_u64(bytes, pos));
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

inline void write_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  const auto bytes = encode_tensors(tensors);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline std::vector<NamedTensor> read_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_tensors(bytes);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

/// Parameters whose names satisfy `keep`, in store order.
template <typename Pred>
std::vector<NamedTensor> export_parameters(const ParameterStore& store, Pred keep) {
  std::vector<NamedTensor> out;
  for (const auto& [name, e] : store.entries()) {
    if (keep(name)) out.push_back({name, e.value});
  }
  return out;
}

}  // namespace lgd
