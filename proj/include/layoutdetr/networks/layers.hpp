#pragma once

// Transformer building blocks over ad::Tensor. Layers hold tensor handles
// into a ParamRegistry; they own no state of their own.

#include <cmath>
#include <string>
#include <vector>

#include "layoutdetr/autodiff/params.hpp"
#include "layoutdetr/autodiff/tensor.hpp"

namespace layoutdetr::nn {

using ad::Tensor;

// Mask convention everywhere: 1 = real element, 0 = padding. Empty = all real.
using Mask = std::vector<char>;

template <class T>
struct Linear {
  Tensor<T> w, b;

  Linear() = default;
  Linear(ad::ParamRegistry<T>& reg, const std::string& name, int in, int out, Rng& rng) {
    w = reg.add_glorot(name + ".w", in, out, rng);
    b = reg.add_constant(name + ".b", 1, out, T(0));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return ad::affine(x, w, b); }
  int in_features() const { return w.rows(); }
  int out_features() const { return w.cols(); }
};

template <class T>
struct LayerNorm {
  Tensor<T> gain, bias;

  LayerNorm() = default;
  LayerNorm(ad::ParamRegistry<T>& reg, const std::string& name, int dim) {
    gain = reg.add_constant(name + ".g", 1, dim, T(1));
    bias = reg.add_constant(name + ".b", 1, dim, T(0));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return ad::layer_norm(x, gain, bias); }
};

template <class T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ad::ParamRegistry<T>& reg, const std::string& name, int dim, int num_heads, Rng& rng)
      : heads(num_heads) {
    if (dim % num_heads != 0) throw ConfigurationError("model_dim must be divisible by num_heads");
    q = Linear<T>(reg, name + ".q", dim, dim, rng);
    k = Linear<T>(reg, name + ".k", dim, dim, rng);
    v = Linear<T>(reg, name + ".v", dim, dim, rng);
    o = Linear<T>(reg, name + ".o", dim, dim, rng);
  }

  // queries [n, d] attend over memory [m, d]; memory rows with mask 0 are ignored.
  Tensor<T> operator()(const Tensor<T>& queries, const Tensor<T>& memory, const Mask& key_mask = {}) const {
    const int d = queries.cols(), hd = d / heads;
    const T scale = T(1.0 / std::sqrt(double(hd)));
    Tensor<T> Q = q(queries), K = k(memory), V = v(memory);
    if (heads == 1) return o(ad::matmul(ad::softmax_rows(ad::matmul_nt(Q, K) * scale, key_mask), V));
    std::vector<Tensor<T>> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      Tensor<T> qh = ad::slice_cols(Q, h * hd, hd), kh = ad::slice_cols(K, h * hd, hd), vh = ad::slice_cols(V, h * hd, hd);
      outs.push_back(ad::matmul(ad::softmax_rows(ad::matmul_nt(qh, kh) * scale, key_mask), vh));
    }
    return o(ad::concat_cols(outs));
  }
};

template <class T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(ad::ParamRegistry<T>& reg, const std::string& name, int dim, Rng& rng) {
    up = Linear<T>(reg, name + ".up", dim, 2 * dim, rng);
    down = Linear<T>(reg, name + ".down", 2 * dim, dim, rng);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return down(ad::relu(up(x))); }
};

// Pre-norm self-attention block.
template <class T>
struct EncoderLayer {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  FeedForward<T> ffn;

  EncoderLayer() = default;
  EncoderLayer(ad::ParamRegistry<T>& reg, const std::string& name, int dim, int heads, Rng& rng)
      : ln1(reg, name + ".ln1", dim),
        ln2(reg, name + ".ln2", dim),
        attn(reg, name + ".attn", dim, heads, rng),
        ffn(reg, name + ".ffn", dim, rng) {}

  Tensor<T> operator()(const Tensor<T>& x, const Mask& mask = {}) const {
    Tensor<T> n = ln1(x);
    Tensor<T> h = x + attn(n, n, mask);
    return h + ffn(ln2(h));
  }
};

// Pre-norm self-attention + cross-attention block.
template <class T>
struct DecoderLayer {
  LayerNorm<T> ln1, ln2, ln3;
  MultiHeadAttention<T> self_attn, cross_attn;
  FeedForward<T> ffn;

  DecoderLayer() = default;
  DecoderLayer(ad::ParamRegistry<T>& reg, const std::string& name, int dim, int heads, Rng& rng)
      : ln1(reg, name + ".ln1", dim),
        ln2(reg, name + ".ln2", dim),
        ln3(reg, name + ".ln3", dim),
        self_attn(reg, name + ".self", dim, heads, rng),
        cross_attn(reg, name + ".cross", dim, heads, rng),
        ffn(reg, name + ".ffn", dim, rng) {}

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& memory, const Mask& mask = {}) const {
    Tensor<T> n = ln1(x);
    Tensor<T> h = x + self_attn(n, n, mask);
    h = h + cross_attn(ln2(h), memory);
    return h + ffn(ln3(h));
  }
};

// Fixed 2-D sinusoidal encodings for a grid x grid token map; the first half
// of the channels encode the row, the second half the column.
inline std::vector<double> sinusoidal_2d(int grid, int dim) {
  std::vector<double> pe(std::size_t(grid) * grid * dim, 0.0);
  const int half = dim / 2;
  auto fill = [&](double pos, double* out, int width) {
    for (int i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -double(2 * (i / 2)) / double(width));
      out[i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  };
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) {
      double* row = &pe[(std::size_t(r) * grid + c) * dim];
      fill(r, row, half);
      fill(c, row + half, dim - half);
    }
  return pe;
}

}  // namespace layoutdetr::nn
