#pragma once

#include <vector>

#include "nearl/config.hpp"
#include "nearl/nn.hpp"
#include "nearl/tensor.hpp"

namespace nearl {

// Bidirectional query module. One W_Q/W_K/W_V triple serves both directions,
// every internal layer and every encoder hook point; the FFN stack holds one
// entry per internal layer and is likewise shared across hook points.
struct UseformerWeights {
    Tensor proj_image;  // P^v: D^v -> D^q
    Tensor proj_text;   // P^t: D^t -> D^q
    Tensor wq;
    Tensor wk;
    Tensor wv;
    std::vector<nn::FfnWeights> ffn;  // size M
    Tensor query_image;               // q^v: (N^q x D^q)
    Tensor query_text;                // q^t: (N^q x D^q)

    std::size_t depth() const noexcept { return ffn.size(); }
};

struct ProjectedFeatures {
    Tensor image;  // h^v: (..., N^v + 1, D^q)
    Tensor text;   // h^t: (..., C * N^t, D^q)
};

struct QueryState {
    Tensor text;   // refined q^t
    Tensor image;  // refined q^v
};

// Cross-modal summaries for one hook point. z^v feeds the image adapter and
// carries text information; z^t feeds the text adapter and carries image
// information.
struct Summaries {
    Tensor image;  // z^v: (..., N^q, D^q)
    Tensor text;   // z^t: (..., N^q, D^q)
};

// Collapses (..., C, N, d) to (..., C * N, d).
Tensor merge_token_groups(const Tensor& text_features);

ProjectedFeatures project_features(const Tensor& image_features, const Tensor& text_features,
                                   const UseformerWeights& w);

// One internal layer; both directions read the same input state:
//   q^t' = q^t + FFN_i(q^t + Attn_I2T(q^t, h^v))
//   q^v' = q^v + FFN_i(q^v + Attn_T2I(q^v, h^t))
QueryState useformer_layer(const QueryState& state, const ProjectedFeatures& h,
                           const UseformerWeights& w, std::size_t layer_index);

// Starts from the learnable query banks and applies all M layers.
Summaries useformer_forward(const Tensor& image_features, const Tensor& text_features,
                            const UseformerWeights& w);

}  // namespace nearl
