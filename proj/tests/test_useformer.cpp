#include <doctest.h>

#include "helpers.hpp"
#include "nearl/adapters.hpp"
#include "nearl/useformer.hpp"
#include "oracles.hpp"

using namespace nearl;

namespace {

struct Fixture {
    ModelConfig c = ModelConfig::tiny();
    UseformerWeights w = *AdapterBank::init(c).useformer;
    Rng rng{17};
    Tensor fv = randn({3, c.n_patches + 1, c.d_image}, rng, 1.0);
    Tensor ft = randn({3, c.n_classes, c.n_text_tokens, c.d_text}, rng, 1.0);
};

}  // namespace

TEST_CASE("summaries have one (N^q x D^q) block per sample") {
    Fixture f;
    const Summaries z = useformer_forward(f.fv, f.ft, f.w);
    CHECK(z.image.shape() == Shape{3, f.c.n_query, f.c.d_query});
    CHECK(z.text.shape() == Shape{3, f.c.n_query, f.c.d_query});
    const Tensor unbatched = slice(f.ft, 0, 0, 1);
    // Frozen-text input (no batch axis): z^v depends on text only, so it is shared.
    const Summaries shared =
        useformer_forward(f.fv, reshape(unbatched, {f.c.n_classes, f.c.n_text_tokens, f.c.d_text}), f.w);
    CHECK(shared.image.shape() == Shape{f.c.n_query, f.c.d_query});
    CHECK(shared.text.shape() == Shape{3, f.c.n_query, f.c.d_query});
}

TEST_CASE("each summary is driven by the opposing modality") {
    Fixture f;
    const Summaries base = useformer_forward(f.fv, f.ft, f.w);
    const Summaries image_moved = useformer_forward(scale(f.fv, 2.0), f.ft, f.w);
    const Summaries text_moved = useformer_forward(f.fv, scale(f.ft, 2.0), f.w);
    // z^t carries image information and z^v text information.
    CHECK(testing::max_abs_diff(base.text.values(), image_moved.text.values()) > 1e-6);
    CHECK(testing::bitwise_equal(base.image.values(), image_moved.image.values()));
    CHECK(testing::max_abs_diff(base.image.values(), text_moved.image.values()) > 1e-6);
    CHECK(testing::bitwise_equal(base.text.values(), text_moved.text.values()));
}

TEST_CASE("one layer matches a brute-force evaluation with the shared projections") {
    Fixture f;
    const ProjectedFeatures h = project_features(slice(f.fv, 0, 0, 1), slice(f.ft, 0, 0, 1), f.w);
    const QueryState s0{f.w.query_text, f.w.query_image};
    const QueryState s1 = useformer_layer(s0, h, f.w, 0);
    const double dq = static_cast<double>(f.c.d_query);
    const auto hv = oracle::to_mat(h.image);
    const auto qt = oracle::to_mat(f.w.query_text);
    const auto a = oracle::attention(qt, hv, oracle::to_mat(f.w.wq), oracle::to_mat(f.w.wk),
                                     oracle::to_mat(f.w.wv), dq);
    // q + FFN(q + a), FFN = GELU(x W1 + b1) W2 + b2.
    oracle::Mat pre = qt;
    for (std::size_t i = 0; i < pre.size(); ++i)
        for (std::size_t j = 0; j < pre[i].size(); ++j) pre[i][j] += a[i][j];
    auto hid = oracle::matmul(pre, oracle::to_mat(f.w.ffn[0].up.weight));
    const auto b1 = f.w.ffn[0].up.bias->values();
    for (auto& row : hid)
        for (std::size_t j = 0; j < row.size(); ++j) {
            const double x = row[j] + b1[j];
            row[j] = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
        }
    auto out = oracle::matmul(hid, oracle::to_mat(f.w.ffn[0].down.weight));
    const auto b2 = f.w.ffn[0].down.bias->values();
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += b2[j] + qt[i][j];
    CHECK(oracle::max_abs_diff(out, s1.text) < 1e-12);
    CHECK_THROWS(useformer_layer(s0, h, f.w, f.c.useformer_depth));
}

TEST_CASE("merge_token_groups flattens class and token axes") {
    Rng rng(2);
    const Tensor t = randn({2, 3, 4, 5}, rng, 1.0);
    const Tensor m = merge_token_groups(t);
    CHECK(m.shape() == Shape{2, 12, 5});
    CHECK(m.at({1, 7, 3}) == t.at({1, 1, 3, 3}));
}
