#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nearl/backbone.hpp"
#include "nearl/error.hpp"

using namespace nearl;

namespace {

Tensor images_for(const ModelConfig& c, std::size_t batch, std::uint64_t seed) {
    Rng rng(seed);
    return randn({batch, c.n_patches, c.patch_dim}, rng, 1.0);
}

}  // namespace

TEST_CASE("frozen towers produce the documented shapes") {
    const ModelConfig c = ModelConfig::tiny();
    const BackboneWeights w = BackboneWeights::init(c);
    const PromptBatch prompts = build_prompts({c.modality, c.class_names}, Vocabulary::toy(), c.n_text_tokens);
    const auto img = encode_image_frozen(images_for(c, 3, 1), w, c);
    const auto txt = encode_text_frozen(prompts, w, c);
    REQUIRE(img.size() == c.n_layers + 1);
    REQUIRE(txt.size() == c.n_layers + 1);
    CHECK(img.back().shape() == Shape{3, c.n_patches + 1, c.d_image});
    CHECK(txt.back().shape() == Shape{c.n_classes, c.n_text_tokens, c.d_text});
    CHECK(global_feature(img.back(), w.image).shape() == Shape{3, c.d_image});
    CHECK(eos_features(txt.back(), w.text, prompts).shape() == Shape{c.n_classes, c.d_text});
}

TEST_CASE("no backbone tensor requires grad and the checksum is stable") {
    const ModelConfig c = ModelConfig::toy();
    const BackboneWeights a = BackboneWeights::init(c);
    const BackboneWeights b = BackboneWeights::init(c);
    for (const auto& [name, t] : a.named()) {
        CAPTURE(name);
        CHECK_FALSE(t.requires_grad());
    }
    CHECK(a.checksum() == b.checksum());
    ModelConfig other = c;
    other.seed = 1;
    CHECK(BackboneWeights::init(other).checksum() != a.checksum());
    Tensor first = a.named().front().tensor;
    first.mutable_values()[0] = std::nextafter(first.values()[0], 1e9);
    CHECK(a.checksum() != b.checksum());
}

TEST_CASE("named() is sorted and unique") {
    const auto named = BackboneWeights::init(ModelConfig::tiny()).named();
    for (std::size_t i = 1; i < named.size(); ++i) CHECK(named[i - 1].name < named[i].name);
}

TEST_CASE("the image batch must match the configured patch grid") {
    const ModelConfig c = ModelConfig::tiny();
    const BackboneWeights w = BackboneWeights::init(c);
    try {
        embed_image(Tensor::zeros({2, c.n_patches + 1, c.patch_dim}), w.image, c);
        FAIL("expected dim_mismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::dim_mismatch);
    }
}

TEST_CASE("cosine logits are bounded by 1/tau and reject tau <= 0") {
    Rng rng(3);
    const Tensor v = randn({5, 6}, rng, 1.0);
    const Tensor s = randn({3, 6}, rng, 1.0);
    const ProjectorWeights p{Tensor::identity(6), Tensor::identity(6)};
    const JointFeatures j = project_joint(v, s, p);
    const Tensor logits = cosine_logits(j.v, j.s, 0.5);
    REQUIRE(logits.shape() == Shape{5, 3});
    for (double x : logits.values()) CHECK(std::abs(x) <= 2.0 + 1e-12);
    CHECK_THROWS_AS(cosine_logits(j.v, j.s, 0.0), Error);
    // Per-sample class embeddings give the same answer when every sample sees the same classes.
    const Tensor batched = add(Tensor::zeros({5, 3, 6}), j.s);
    CHECK(testing::max_abs_diff(cosine_logits(j.v, batched, 0.5).values(), logits.values()) < 1e-15);
}

TEST_CASE("images are processed independently of their batch mates") {
    const ModelConfig c = ModelConfig::tiny();
    const BackboneWeights w = BackboneWeights::init(c);
    const Tensor imgs = images_for(c, 4, 9);
    const auto all = encode_image_frozen(imgs, w, c).back();
    const auto one = encode_image_frozen(slice(imgs, 0, 2, 1), w, c).back();
    CHECK(testing::bitwise_equal(slice(all, 0, 2, 1).values(), one.values()));
}
