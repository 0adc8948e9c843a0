#include "nearl/model.hpp"

#include <algorithm>

#include "nearl/error.hpp"

namespace nearl {

Model Model::build(const ModelConfig& config) {
    config.validate();
    const Vocabulary& vocab = Vocabulary::toy();
    if (config.vocab_size < vocab.size()) {
        fail(ErrorKind::config, "vocab_size " + std::to_string(config.vocab_size) +
                                    " is smaller than the built-in vocabulary (" +
                                    std::to_string(vocab.size()) + " words)");
    }
    Model m;
    m.config = config;
    m.backbone = BackboneWeights::init(config);
    m.bank = AdapterBank::init(config);
    m.prompts = build_prompts({config.modality, config.class_names}, vocab, config.n_text_tokens);
    trainable_registry(m.bank, config.mode);
    return m;
}

std::vector<NamedTensor> Model::named() const {
    auto out = backbone.named();
    auto adapters = bank.named();
    out.insert(out.end(), adapters.begin(), adapters.end());
    return out;
}

void check_bank(const AdapterBank& bank, const ModelConfig& config) {
    const AdapterBank expected = AdapterBank::init(config);
    const auto want = expected.named();
    const auto have = bank.named();
    if (want.size() != have.size()) {
        fail(ErrorKind::dim_mismatch, "adapter bank holds " + std::to_string(have.size()) +
                                          " tensors, config expects " + std::to_string(want.size()));
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].name != have[i].name || want[i].tensor.shape() != have[i].tensor.shape()) {
            fail(ErrorKind::dim_mismatch, "adapter tensor " + have[i].name + " " +
                                              shape_str(have[i].tensor.shape()) +
                                              " does not match config (" + want[i].name + " " +
                                              shape_str(want[i].tensor.shape()) + ")");
        }
    }
}

namespace {

// Reshapes a merged (..., C*N, d) increment back to (..., C, N, d).
Tensor split_token_groups(const Tensor& merged, std::size_t groups, std::size_t tokens) {
    Shape shape(merged.shape().begin(), merged.shape().end() - 2);
    shape.push_back(groups);
    shape.push_back(tokens);
    shape.push_back(merged.dim(-1));
    return reshape(merged, shape);
}

struct Increments {
    Tensor image;
    Tensor text;
};

Increments oca_increments(const Model& m, std::size_t layer, const Tensor& fv, const Tensor& ft) {
    const ModelConfig& c = m.config;
    const Summaries z = c.mode == AblationMode::no_useformer
                            ? linear_summaries(fv, ft, *m.bank.linear_summary, c.n_query)
                            : useformer_forward(fv, ft, *m.bank.useformer);
    const Tensor dv = oca_delta(fv, z.image, m.bank.oca_image.at(layer));
    const Tensor dt_merged = oca_delta(merge_token_groups(ft), z.text, m.bank.oca_text.at(layer));
    return {dv, split_token_groups(dt_merged, ft.dim(-3), ft.dim(-2))};
}

ForwardResult finish(const Model& m, const Tensor& final_image, const Tensor& final_text) {
    ForwardResult r;
    r.joint = project_joint(global_feature(final_image, m.backbone.image),
                            eos_features(final_text, m.backbone.text, m.prompts),
                            m.bank.projectors);
    r.logits = cosine_logits(r.joint.v, r.joint.s, m.config.temperature);
    return r;
}

}  // namespace

ForwardResult adapted_forward(const Model& m, const Tensor& images, const ForwardOptions& options) {
    const ModelConfig& c = m.config;
    const OrthoConfig ortho{c.ortho_eps};
    Tensor fv = embed_image(images, m.backbone.image, c);
    Tensor ft = embed_text(m.prompts, m.backbone.text, c);
    EncoderTrace trace;
    std::vector<LayerOrtho> probes;
    if (options.keep_trace) {
        trace.image.push_back(fv);
        trace.text.push_back(ft);
    }
    for (std::size_t layer = 1; layer <= c.n_layers; ++layer) {
        const Tensor fv_next = encoder_layer(fv, m.backbone.image.layers[layer - 1]);
        const Tensor ft_next = encoder_layer(ft, m.backbone.text.layers[layer - 1]);
        if (c.mode == AblationMode::frozen || !c.is_hooked(layer)) {
            fv = fv_next;
            ft = ft_next;
        } else if (c.mode == AblationMode::lora) {
            const auto& lv = m.bank.lora_image.at(layer);
            const auto& lt = m.bank.lora_text.at(layer);
            const Tensor dv = lora_delta(fv, lv.a, lv.b);
            const Tensor dt = lora_delta(ft, lt.a, lt.b);
            fv = fv_next + dv;
            ft = ft_next + dt;
        } else {
            Increments inc = oca_increments(m, layer, fv, ft);
            if (c.mode != AblationMode::no_or) {
                const Tensor& ref_v = c.ortho_target == OrthoTarget::output ? fv_next : fv;
                const Tensor& ref_t = c.ortho_target == OrthoTarget::output ? ft_next : ft;
                const Tensor pv = orthogonalize(inc.image, ref_v, ortho);
                const Tensor pt = orthogonalize(inc.text, ref_t, ortho);
                if (options.measure_orthogonality) {
                    probes.push_back({layer, 'v', measure_orthogonality(inc.image, pv, ref_v)});
                    probes.push_back({layer, 't', measure_orthogonality(inc.text, pt, ref_t)});
                }
                inc = {pv, pt};
            }
            fv = oca_apply(fv_next, inc.image);
            ft = oca_apply(ft_next, inc.text);
        }
        if (options.keep_trace) {
            trace.image.push_back(fv);
            trace.text.push_back(ft);
        }
    }
    ForwardResult r = finish(m, fv, ft);
    r.trace = std::move(trace);
    r.ortho = std::move(probes);
    return r;
}

ForwardResult frozen_forward(const Model& m, const Tensor& images, const ForwardOptions& options) {
    auto image_trace = encode_image_frozen(images, m.backbone, m.config);
    auto text_trace = encode_text_frozen(m.prompts, m.backbone, m.config);
    ForwardResult r = finish(m, image_trace.back(), text_trace.back());
    if (options.keep_trace) r.trace = {std::move(image_trace), std::move(text_trace)};
    return r;
}

}  // namespace nearl
