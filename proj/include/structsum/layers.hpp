#pragma once

// Building blocks shared by the encoder and decoder: affine maps,
// multi-head scaled dot-product attention, position-wise feed-forward,
// layer norm parameters and sinusoidal positions.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "structsum/params.hpp"
#include "structsum/tensor.hpp"

namespace structsum {

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;
  double dropout = 0.0;

  Tensor drop(const Tensor& x) const {
    if (!train || dropout <= 0.0 || rng == nullptr) return x;
    return structsum::dropout(x, dropout, *rng, true);
  }
};

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  static Linear create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed,
                       bool bias = true) {
    auto rng = param_rng(seed, name + ".w");
    Linear l;
    l.w = store.add(name + ".w", xavier_uniform({in, out}, in, out, rng));
    if (bias) l.b = store.add(name + ".b", Tensor::zeros({out}));
    return l;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, w);
    return b.defined() ? add(y, b) : y;
  }
};

struct Norm {
  Tensor gain;
  Tensor bias;

  static Norm create(ParamStore& store, const std::string& name, std::size_t dim) {
    return {store.add(name + ".gain", Tensor::full({dim}, 1.0)), store.add(name + ".bias", Tensor::zeros({dim}))};
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, 1e-5); }
};

struct FeedForward {
  Linear in;
  Linear out;

  static FeedForward create(ParamStore& store, const std::string& name, std::size_t in_dim, std::size_t hidden,
                            std::size_t out_dim, std::uint64_t seed) {
    return {Linear::create(store, name + ".in", in_dim, hidden, seed),
            Linear::create(store, name + ".out", hidden, out_dim, seed)};
  }

  Tensor operator()(const Tensor& x) const { return out(gelu(in(x))); }
};

// Per-head attention probabilities, one [queries, keys] tensor per head.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                                   std::uint64_t seed) {
    return {Linear::create(store, name + ".q", dim, dim, seed), Linear::create(store, name + ".k", dim, dim, seed),
            Linear::create(store, name + ".v", dim, dim, seed), Linear::create(store, name + ".o", dim, dim, seed),
            heads};
  }

  // query: [n, d], memory: [m, d], mask broadcastable to [n, m] (true keeps).
  // An empty memory yields a zero [n, d] result.
  Tensor operator()(const Tensor& query, const Tensor& memory, const Mask* mask = nullptr,
                    AttentionTrace* trace = nullptr) const {
    const std::size_t n = query.dim(0);
    const std::size_t d = query.dim(1);
    if (memory.dim(0) == 0) return Tensor::zeros({n, d});
    if (memory.dim(1) != d) throw ShapeError("attention: query and memory widths differ");
    const std::size_t dh = d / heads;
    const Tensor Q = q(query), K = k(memory), V = v(memory);
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor qh = slice_last(Q, h * dh, dh);
      Tensor kh = slice_last(K, h * dh, dh);
      Tensor vh = slice_last(V, h * dh, dh);
      Tensor scores = scale(matmul(qh, transpose(kh)), scale_factor);
      Tensor p = softmax(scores, -1, mask);
      if (trace) trace->weights.push_back(p);
      outs.push_back(matmul(p, vh));
    }
    return o(heads == 1 ? outs[0] : concat_last(outs));
  }
};

// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same).
inline Tensor sinusoidal_positions(std::size_t n, std::size_t d) {
  std::vector<double> v(n * d);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      v[pos * d + i] = i % 2 == 0 ? std::sin(static_cast<double>(pos) * freq) : std::cos(static_cast<double>(pos) * freq);
    }
  return Tensor::from({n, d}, std::move(v));
}

}  // namespace structsum
