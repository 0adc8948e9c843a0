#pragma once

#include <optional>
#include <span>

#include "nearl/tensor.hpp"

namespace nearl::nn {

// x W (+ b). W is (in_dim x out_dim); the bias is absent wherever the
// formula is a bare matrix product.
struct LinearWeights {
    Tensor weight;
    std::optional<Tensor> bias;

    std::size_t in_dim() const { return weight.dim(0); }
    std::size_t out_dim() const { return weight.dim(1); }
};

// GELU(x W1 + b1) W2 + b2.
struct FfnWeights {
    LinearWeights up;
    LinearWeights down;
};

struct LayerNormWeights {
    Tensor gamma;
    Tensor beta;
};

inline constexpr double kLayerNormEps = 1e-5;

Tensor linear(const Tensor& x, const LinearWeights& w);

// Single-head scaled dot-product attention:
//   softmax((q_in Wq)(kv_in Wk)^T / sqrt(d_scale)) (kv_in Wv).
// An undefined projection tensor stands for the identity map, which is how
// the adapter attention (no learned Q/K/V) is expressed.
Tensor cross_attention(const Tensor& q_in, const Tensor& kv_in, const Tensor& wq,
                       const Tensor& wk, const Tensor& wv, double d_scale);

Tensor ffn(const Tensor& x, const FfnWeights& w);

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = kLayerNormEps);
inline Tensor layernorm(const Tensor& x, const LayerNormWeights& w) {
    return layernorm(x, w.gamma, w.beta);
}

// Row gather from an embedding table (vocab x d).
Tensor embed(std::span<const std::size_t> ids, const Tensor& table);

// <a_row, b_row> over the last axis, keeping it as size 1.
Tensor row_inner(const Tensor& a, const Tensor& b);

// Divides every row (last axis) by its Euclidean norm. Rejects zero rows.
Tensor l2_normalize_rows(const Tensor& x);

}  // namespace nearl::nn
