#include "nearl/nn.hpp"

#include <cmath>

#include "nearl/error.hpp"

namespace nearl::nn {

Tensor linear(const Tensor& x, const LinearWeights& w) {
    if (w.weight.rank() != 2 || x.dim(-1) != w.in_dim()) {
        fail(ErrorKind::shape, "linear: input " + shape_str(x.shape()) + " vs weight " +
                                   shape_str(w.weight.shape()));
    }
    Tensor y = matmul(x, w.weight);
    if (w.bias) {
        if (w.bias->rank() != 1 || w.bias->dim(0) != w.out_dim()) {
            fail(ErrorKind::shape, "linear: bias " + shape_str(w.bias->shape()) +
                                       " does not match out_dim " + std::to_string(w.out_dim()));
        }
        y = y + *w.bias;
    }
    return y;
}

Tensor cross_attention(const Tensor& q_in, const Tensor& kv_in, const Tensor& wq,
                       const Tensor& wk, const Tensor& wv, double d_scale) {
    if (!(d_scale > 0.0)) fail(ErrorKind::shape, "cross_attention: d_scale must be positive");
    const Tensor q = wq.defined() ? matmul(q_in, wq) : q_in;
    const Tensor k = wk.defined() ? matmul(kv_in, wk) : kv_in;
    const Tensor v = wv.defined() ? matmul(kv_in, wv) : kv_in;
    if (q.dim(-1) != k.dim(-1)) {
        fail(ErrorKind::shape, "cross_attention: query dim " + std::to_string(q.dim(-1)) +
                                   " vs key dim " + std::to_string(k.dim(-1)));
    }
    const Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(d_scale));
    return matmul(softmax(scores, -1), v);
}

Tensor ffn(const Tensor& x, const FfnWeights& w) {
    if (w.up.in_dim() != w.down.out_dim()) {
        fail(ErrorKind::shape, "ffn: input dim " + std::to_string(w.up.in_dim()) +
                                   " differs from output dim " + std::to_string(w.down.out_dim()));
    }
    return linear(gelu(linear(x, w.up)), w.down);
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (!(eps > 0.0)) fail(ErrorKind::shape, "layernorm: eps must be positive");
    const Tensor centered = x - mean(x, -1);
    const Tensor var = mean(centered * centered, -1);
    const Tensor normed = centered / sqrt(add_scalar(var, eps));
    return normed * gamma + beta;
}

Tensor embed(std::span<const std::size_t> ids, const Tensor& table) {
    return gather_rows(table, ids);
}

Tensor row_inner(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        fail(ErrorKind::shape, "row_inner: shape mismatch " + shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
    }
    return sum(a * b, -1);
}

Tensor l2_normalize_rows(const Tensor& x) {
    const Tensor sq = row_inner(x, x);
    for (double v : sq.values()) {
        if (!std::isfinite(v)) fail(ErrorKind::non_finite, "l2_normalize_rows: row norm is not finite");
        if (!(v > 0.0)) fail(ErrorKind::shape, "l2_normalize_rows: zero-norm row cannot be normalized");
    }
    return x / sqrt(sq);
}

}  // namespace nearl::nn
