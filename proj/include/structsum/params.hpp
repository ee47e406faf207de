#pragma once

// Named trainable tensors and the binary checkpoint archive.
//
// Checkpoint layout (all integers little-endian):
//   magic "SSUMCKP1" | u64 config hash | u64 step | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | u64 dims[rank]
//               | f64 values (IEEE-754 bit patterns, little-endian)

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "structsum/config.hpp"
#include "structsum/error.hpp"
#include "structsum/rng.hpp"
#include "structsum/tensor.hpp"

namespace structsum {

class ParamStore {
 public:
  // Registers a trainable tensor; names are hierarchical ("decoder.layer0.ffn.in.w").
  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ShapeError("ParamStore: duplicate parameter " + name);
    t.set_requires_grad(true);
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("ParamStore: no parameter " + name);
    return tensors_[it->second];
  }

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  // Copies values of every same-named, same-shaped tensor from `other`.
  std::size_t copy_matching(const ParamStore& other) {
    std::size_t copied = 0;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!other.contains(names_[i])) continue;
      const Tensor& src = other.get(names_[i]);
      if (src.shape() != tensors_[i].shape()) continue;
      std::copy(src.data().begin(), src.data().end(), tensors_[i].mutable_data().begin());
      ++copied;
    }
    return copied;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

// Per-tensor RNG stream keyed by (seed, name): a tensor's initial values do
// not depend on which other modules the model instantiates.
inline Rng param_rng(std::uint64_t seed, const std::string& name) { return Rng(seed ^ fnv1a64(name)); }

inline Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-a, a);
  return Tensor::from(std::move(shape), std::move(v));
}

// ----------------------------------------------------------------- archive

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}
  std::uint64_t u(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) throw DataError(source_ + ": truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError(source_ + ": truncated checkpoint");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct CheckpointHeader {
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
};

inline std::string serialize_checkpoint(const ParamStore& params, const CheckpointHeader& header) {
  std::string out = "SSUMCKP1";
  detail::put_u64(out, header.config_hash);
  detail::put_u64(out, header.step);
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names()[i];
    const auto& t = params.tensors()[i];
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u64(out, d);
    for (double v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::uint64_t checkpoint_hash(const ParamStore& params, const CheckpointHeader& header) {
  return fnv1a64(serialize_checkpoint(params, header));
}

inline void save_checkpoint(const std::string& path, const ParamStore& params, const CheckpointHeader& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(params, header);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct LoadedCheckpoint {
  CheckpointHeader header;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

inline LoadedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(bytes, path);
  if (r.str(8) != "SSUMCKP1") throw DataError(path + ": not a structsum checkpoint");
  LoadedCheckpoint ck;
  ck.header.config_hash = r.u(8);
  ck.header.step = r.u(8);
  const auto count = r.u(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u(4));
    const auto rank = r.u(4);
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(r.u(8));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(r.u(8));
    ck.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw DataError(path + ": trailing bytes in checkpoint");
  return ck;
}

// Overwrites `params` from a checkpoint; every parameter must be present
// with a matching shape.
inline CheckpointHeader load_checkpoint(const std::string& path, ParamStore& params) {
  auto ck = read_checkpoint(path);
  std::map<std::string, Tensor> by_name(ck.tensors.begin(), ck.tensors.end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names()[i];
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(path + ": missing parameter " + name);
    if (it->second.shape() != params.tensors()[i].shape()) throw DataError(path + ": shape mismatch for " + name);
    auto dst = params.tensors()[i].mutable_data();
    std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
  }
  if (by_name.size() != params.size()) throw DataError(path + ": checkpoint has unexpected parameters");
  return ck.header;
}

}  // namespace structsum
