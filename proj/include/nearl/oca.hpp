#pragma once

#include "nearl/tensor.hpp"

namespace nearl {

// One rank-r adapter for one modality at one hook layer.
struct OcaLayerWeights {
    Tensor down;     // W_d: D -> r, applied to f_k
    Tensor summary;  // W_p: D^q -> r, applied to z_k
    Tensor up;       // W_u: r -> D, zero at initialization
};

struct OrthoConfig {
    // Guards the denominator <f, f> against zero rows.
    double eps = 1e-8;
};

// Delta f_{k+1} = W_u Attn(f_k W_d, z_k W_p): queries from the token
// features, keys = values = projected summaries, no further projections,
// scaled by sqrt(r). One output row per input token.
Tensor oca_delta(const Tensor& features, const Tensor& summaries, const OcaLayerWeights& w);

// Per-token Gram-Schmidt step: delta - (<delta, f> / (<f, f> + eps)) f.
// `reference` may broadcast against `delta` over leading dims.
Tensor orthogonalize(const Tensor& delta, const Tensor& reference, const OrthoConfig& ortho);

// f_{k+1} + increment.
Tensor oca_apply(const Tensor& pretrained, const Tensor& increment);

// Row-wise |cos| between an orthogonalized increment and its reference.
struct OrthoStats {
    std::size_t rows = 0;
    double max_abs_cos = 0.0;
    // Restricted to rows whose reference is non-zero and whose increment kept
    // at least 1e-3 of its norm through the projection, where the cosine is
    // numerically well-conditioned.
    std::size_t nondegenerate_rows = 0;
    double max_abs_cos_nondegenerate = 0.0;

    void merge(const OrthoStats& other);
};

OrthoStats measure_orthogonality(const Tensor& raw_delta, const Tensor& delta_perp,
                                 const Tensor& reference);

}  // namespace nearl
