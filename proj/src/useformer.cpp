#include "nearl/useformer.hpp"

#include "nearl/error.hpp"

namespace nearl {

Tensor merge_token_groups(const Tensor& text_features) {
    if (text_features.rank() < 3) {
        fail(ErrorKind::shape, "merge_token_groups: expected (..., C, N, d), got " +
                                   shape_str(text_features.shape()));
    }
    const auto& s = text_features.shape();
    Shape merged(s.begin(), s.end() - 3);
    merged.push_back(s[s.size() - 3] * s[s.size() - 2]);
    merged.push_back(s.back());
    return reshape(text_features, merged);
}

ProjectedFeatures project_features(const Tensor& image_features, const Tensor& text_features,
                                   const UseformerWeights& w) {
    if (image_features.dim(-1) != w.proj_image.dim(0) ||
        text_features.dim(-1) != w.proj_text.dim(0)) {
        fail(ErrorKind::shape, "project_features: features " + shape_str(image_features.shape()) +
                                   " / " + shape_str(text_features.shape()) +
                                   " do not match projections " +
                                   shape_str(w.proj_image.shape()) + " / " +
                                   shape_str(w.proj_text.shape()));
    }
    return {matmul(image_features, w.proj_image),
            matmul(merge_token_groups(text_features), w.proj_text)};
}

QueryState useformer_layer(const QueryState& state, const ProjectedFeatures& h,
                           const UseformerWeights& w, std::size_t layer_index) {
    if (layer_index >= w.depth()) {
        fail(ErrorKind::shape, "useformer_layer: index " + std::to_string(layer_index) +
                                   " >= depth " + std::to_string(w.depth()));
    }
    const double d_scale = static_cast<double>(w.wq.dim(0));
    const nn::FfnWeights& f = w.ffn[layer_index];
    const Tensor i2t = nn::cross_attention(state.text, h.image, w.wq, w.wk, w.wv, d_scale);
    const Tensor t2i = nn::cross_attention(state.image, h.text, w.wq, w.wk, w.wv, d_scale);
    return {state.text + nn::ffn(state.text + i2t, f),
            state.image + nn::ffn(state.image + t2i, f)};
}

Summaries useformer_forward(const Tensor& image_features, const Tensor& text_features,
                            const UseformerWeights& w) {
    if (w.depth() == 0) fail(ErrorKind::config, "useformer depth must be >= 1");
    const ProjectedFeatures h = project_features(image_features, text_features, w);
    QueryState state{w.query_text, w.query_image};
    for (std::size_t i = 0; i < w.depth(); ++i) state = useformer_layer(state, h, w, i);
    return {state.image, state.text};
}

}  // namespace nearl
