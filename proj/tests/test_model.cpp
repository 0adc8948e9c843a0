#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "nearl/error.hpp"
#include "nearl/model.hpp"
#include "nearl/train.hpp"

using namespace nearl;

namespace {

Tensor images_for(const ModelConfig& c, std::size_t batch, std::uint64_t seed) {
    Rng rng(seed);
    return randn({batch, c.n_patches, c.patch_dim}, rng, 1.0);
}

ModelConfig with_mode(ModelConfig c, AblationMode m) {
    c.mode = m;
    return c;
}

// Gives every zero-initialized up-projection random values so that every
// parameter has a non-trivial gradient.
void randomize_up_projections(Model& m, double scale) {
    Rng rng(m.config.seed + 99);
    for (auto& [name, t] : m.bank.named()) {
        const bool zero_init = name.ends_with(".wu") || (name.starts_with("lora.") && name.ends_with(".b"));
        if (!zero_init) continue;
        Tensor handle = t;
        for (double& x : handle.mutable_values()) x = scale * rng.normal();
    }
}

}  // namespace

TEST_CASE("zero-initialized adapters reproduce the frozen logits bit for bit") {
    for (AblationMode mode : {AblationMode::full, AblationMode::no_or, AblationMode::no_useformer,
                              AblationMode::lora, AblationMode::frozen}) {
        CAPTURE(to_string(mode));
        const Model m = Model::build(with_mode(ModelConfig::toy(), mode));
        const Tensor imgs = images_for(m.config, 5, 3);
        const ForwardResult adapted = adapted_forward(m, imgs);
        const ForwardResult frozen = frozen_forward(m, imgs);
        CHECK(testing::bitwise_equal(adapted.logits.values(), frozen.logits.values()));
    }
}

TEST_CASE("modes carry exactly their own adapter families") {
    const ModelConfig c = ModelConfig::tiny();
    const Model full = Model::build(with_mode(c, AblationMode::full));
    CHECK(full.bank.useformer.has_value());
    CHECK(full.bank.lora_image.empty());
    CHECK(full.bank.oca_image.size() == c.n_layers);
    const Model lora = Model::build(with_mode(c, AblationMode::lora));
    CHECK_FALSE(lora.bank.useformer.has_value());
    CHECK(lora.bank.oca_image.empty());
    CHECK(lora.bank.lora_text.size() == c.n_layers);
    const Model nu = Model::build(with_mode(c, AblationMode::no_useformer));
    CHECK_FALSE(nu.bank.useformer.has_value());
    CHECK(nu.bank.linear_summary.has_value());
    const Model no_or = Model::build(with_mode(c, AblationMode::no_or));
    REQUIRE(no_or.bank.named().size() == full.bank.named().size());
    for (std::size_t i = 0; i < full.bank.named().size(); ++i) {
        CHECK(no_or.bank.named()[i].name == full.bank.named()[i].name);
        CHECK(no_or.bank.named()[i].tensor.shape() == full.bank.named()[i].tensor.shape());
    }
}

TEST_CASE("registry partitions the model: trainable bank, frozen backbone") {
    const Model m = Model::build(ModelConfig::tiny());
    const auto registry = trainable_registry(m.bank, m.config.mode);
    std::set<std::string> names;
    for (const auto& [n, t] : registry) {
        CHECK(t.requires_grad());
        names.insert(n);
    }
    for (const auto& [n, t] : m.backbone.named()) {
        CHECK_FALSE(t.requires_grad());
        CHECK(names.insert("backbone." + n).second);
    }
    CHECK(names.size() == m.named().size());
    CHECK(trainable_registry(m.bank, AblationMode::frozen).empty());
}

TEST_CASE("no_or differs from full only by the projection") {
    const Model full = Model::build(ModelConfig::toy());
    const Model no_or = Model::build(with_mode(ModelConfig::toy(), AblationMode::no_or));
    const Tensor imgs = images_for(full.config, 3, 8);
    CHECK(testing::bitwise_equal(adapted_forward(full, imgs).logits.values(),
                                 adapted_forward(no_or, imgs).logits.values()));
    Model a = Model::build(ModelConfig::tiny());
    Model b = Model::build(with_mode(ModelConfig::tiny(), AblationMode::no_or));
    randomize_up_projections(a, 0.5);
    randomize_up_projections(b, 0.5);
    const Tensor small = images_for(a.config, 3, 8);
    CHECK(testing::max_abs_diff(adapted_forward(a, small).logits.values(),
                                adapted_forward(b, small).logits.values()) > 1e-9);
}

TEST_CASE("full mode increments are orthogonal at every hook") {
    Model m = Model::build(ModelConfig::tiny());
    randomize_up_projections(m, 0.5);
    ForwardOptions o;
    o.measure_orthogonality = true;
    const ForwardResult r = adapted_forward(m, images_for(m.config, 4, 2), o);
    CHECK(r.ortho.size() == 2 * m.config.n_layers);
    for (const auto& l : r.ortho) CHECK(l.stats.max_abs_cos_nondegenerate < 1e-6);
}

TEST_CASE("layer_mask restricts hook points") {
    ModelConfig c = ModelConfig::tiny();
    c.n_layers = 12;
    c.layer_mask = std::vector<std::size_t>{5, 6, 7, 8};
    const Model m = Model::build(c);
    CHECK(m.bank.oca_image.size() == 4);
    CHECK(m.bank.oca_text.size() == 4);
    CHECK(m.bank.oca_image.begin()->first == 5);
    c.layer_mask = std::vector<std::size_t>{13};
    CHECK_THROWS_AS(Model::build(c), Error);
}

TEST_CASE("lora has no cross-modal path; full does") {
    for (AblationMode mode : {AblationMode::lora, AblationMode::full}) {
        CAPTURE(to_string(mode));
        Model m = Model::build(with_mode(ModelConfig::tiny(), mode));
        randomize_up_projections(m, 0.5);
        const Tensor imgs = images_for(m.config, 2, 4);
        const Tensor before = adapted_forward(m, imgs).joint.v.detach();
        // Perturb every text-side adapter tensor.
        for (auto& [name, t] : m.bank.named()) {
            if (name.find(".t.") == std::string::npos) continue;
            Tensor handle = t;
            for (double& x : handle.mutable_values()) x += 0.3;
        }
        const Tensor after = adapted_forward(m, imgs).joint.v;
        const double moved = testing::max_abs_diff(before.values(), after.values());
        if (mode == AblationMode::lora) CHECK(moved == 0.0);
        else CHECK(moved > 1e-9);
    }
}

TEST_CASE("whole-model gradients match central differences at the tiny config") {
    for (AblationMode mode : {AblationMode::full, AblationMode::no_or, AblationMode::no_useformer,
                              AblationMode::lora}) {
        CAPTURE(to_string(mode));
        Model m = Model::build(with_mode(ModelConfig::tiny(), mode));
        testing::randomize_bank(m);
        const Tensor imgs = images_for(m.config, 2, 6);
        const std::vector<std::size_t> labels = {0, 1};
        const auto params = trainable_registry(m.bank, mode);
        const auto loss = [&] { return cross_entropy(adapted_forward(m, imgs).logits, labels); };
        for (const auto& g : testing::check_gradients(loss, params)) {
            CAPTURE(g.name);
            CHECK(g.rel_error < 1e-4);
        }
    }
}

TEST_CASE("check_bank rejects a bank built for another config") {
    const ModelConfig c = ModelConfig::tiny();
    ModelConfig other = c;
    other.rank = 3;
    CHECK_NOTHROW(check_bank(AdapterBank::init(c), c));
    try {
        check_bank(AdapterBank::init(other), c);
        FAIL("expected dim_mismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::dim_mismatch);
    }
}
