#include "nearl/adapters.hpp"

#include <algorithm>
#include <cmath>

#include "nearl/error.hpp"

namespace nearl {

namespace {

constexpr double kAdapterStd = 0.02;

class ParamFactory {
public:
    explicit ParamFactory(std::uint64_t seed) : root_(seed) {}

    Tensor normal(const std::string& name, Shape shape, double std) const {
        Rng rng = root_.stream("adapter." + name);
        return randn(shape, rng, std, true);
    }
    static Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }

private:
    Rng root_;
};

double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

std::string layer_prefix(const char* family, char modality, std::size_t layer) {
    return std::string(family) + "." + modality + ".layer" + std::to_string(layer);
}

}  // namespace

AdapterBank AdapterBank::init(const ModelConfig& c) {
    c.validate();
    const ParamFactory p(c.seed);
    AdapterBank bank;
    bank.projectors.image = p.normal("proj.image", {c.d_image, c.d_joint}, fan_in_std(c.d_image));
    bank.projectors.text = p.normal("proj.text", {c.d_text, c.d_joint}, fan_in_std(c.d_text));

    const bool with_oca = c.mode == AblationMode::full || c.mode == AblationMode::no_or ||
                          c.mode == AblationMode::no_useformer;
    if (c.mode == AblationMode::full || c.mode == AblationMode::no_or) {
        UseformerWeights u;
        u.proj_image = p.normal("useformer.proj_image", {c.d_image, c.d_query}, fan_in_std(c.d_image));
        u.proj_text = p.normal("useformer.proj_text", {c.d_text, c.d_query}, fan_in_std(c.d_text));
        const double sq = fan_in_std(c.d_query);
        u.wq = p.normal("useformer.wq", {c.d_query, c.d_query}, sq);
        u.wk = p.normal("useformer.wk", {c.d_query, c.d_query}, sq);
        u.wv = p.normal("useformer.wv", {c.d_query, c.d_query}, sq);
        for (std::size_t i = 0; i < c.useformer_depth; ++i) {
            const std::string pre = "useformer.ffn" + std::to_string(i);
            nn::FfnWeights f;
            f.up = {p.normal(pre + ".w1", {c.d_query, c.d_ffn_useformer}, sq),
                    ParamFactory::zeros({c.d_ffn_useformer})};
            f.down = {p.normal(pre + ".w2", {c.d_ffn_useformer, c.d_query},
                               fan_in_std(c.d_ffn_useformer)),
                      ParamFactory::zeros({c.d_query})};
            u.ffn.push_back(std::move(f));
        }
        u.query_image = p.normal("useformer.query_image", {c.n_query, c.d_query}, kAdapterStd);
        u.query_text = p.normal("useformer.query_text", {c.n_query, c.d_query}, kAdapterStd);
        bank.useformer = std::move(u);
    }
    if (c.mode == AblationMode::no_useformer) {
        const std::size_t out = c.n_query * c.d_query;
        LinearSummaryWeights s;
        s.text_to_image = {p.normal("summary.text_to_image.w", {c.d_text, out}, fan_in_std(c.d_text)),
                           ParamFactory::zeros({out})};
        s.image_to_text = {p.normal("summary.image_to_text.w", {c.d_image, out}, fan_in_std(c.d_image)),
                           ParamFactory::zeros({out})};
        bank.linear_summary = std::move(s);
    }
    for (std::size_t layer : c.hook_layers()) {
        if (with_oca) {
            for (char m : {'v', 't'}) {
                const std::size_t d = m == 'v' ? c.d_image : c.d_text;
                const std::string pre = layer_prefix("oca", m, layer);
                OcaLayerWeights w{p.normal(pre + ".wd", {d, c.rank}, kAdapterStd),
                                  p.normal(pre + ".wp", {c.d_query, c.rank}, kAdapterStd),
                                  ParamFactory::zeros({c.rank, d})};
                (m == 'v' ? bank.oca_image : bank.oca_text).emplace(layer, std::move(w));
            }
        }
        if (c.mode == AblationMode::lora) {
            for (char m : {'v', 't'}) {
                const std::size_t d = m == 'v' ? c.d_image : c.d_text;
                const std::string pre = layer_prefix("lora", m, layer);
                LoraLayerWeights w{p.normal(pre + ".a", {d, c.rank}, kAdapterStd),
                                   ParamFactory::zeros({c.rank, d})};
                (m == 'v' ? bank.lora_image : bank.lora_text).emplace(layer, std::move(w));
            }
        }
    }
    return bank;
}

std::vector<NamedTensor> AdapterBank::named() const {
    std::vector<NamedTensor> out;
    out.push_back({"proj.image", projectors.image});
    out.push_back({"proj.text", projectors.text});
    if (useformer) {
        const auto& u = *useformer;
        out.push_back({"useformer.proj_image", u.proj_image});
        out.push_back({"useformer.proj_text", u.proj_text});
        out.push_back({"useformer.wq", u.wq});
        out.push_back({"useformer.wk", u.wk});
        out.push_back({"useformer.wv", u.wv});
        for (std::size_t i = 0; i < u.ffn.size(); ++i) {
            const std::string pre = "useformer.ffn" + std::to_string(i);
            out.push_back({pre + ".w1", u.ffn[i].up.weight});
            out.push_back({pre + ".b1", *u.ffn[i].up.bias});
            out.push_back({pre + ".w2", u.ffn[i].down.weight});
            out.push_back({pre + ".b2", *u.ffn[i].down.bias});
        }
        out.push_back({"useformer.query_image", u.query_image});
        out.push_back({"useformer.query_text", u.query_text});
    }
    if (linear_summary) {
        out.push_back({"summary.text_to_image.w", linear_summary->text_to_image.weight});
        out.push_back({"summary.text_to_image.b", *linear_summary->text_to_image.bias});
        out.push_back({"summary.image_to_text.w", linear_summary->image_to_text.weight});
        out.push_back({"summary.image_to_text.b", *linear_summary->image_to_text.bias});
    }
    const auto add_oca = [&](char m, const std::map<std::size_t, OcaLayerWeights>& layers) {
        for (const auto& [layer, w] : layers) {
            const std::string pre = layer_prefix("oca", m, layer);
            out.push_back({pre + ".wd", w.down});
            out.push_back({pre + ".wp", w.summary});
            out.push_back({pre + ".wu", w.up});
        }
    };
    add_oca('v', oca_image);
    add_oca('t', oca_text);
    const auto add_lora = [&](char m, const std::map<std::size_t, LoraLayerWeights>& layers) {
        for (const auto& [layer, w] : layers) {
            const std::string pre = layer_prefix("lora", m, layer);
            out.push_back({pre + ".a", w.a});
            out.push_back({pre + ".b", w.b});
        }
    };
    add_lora('v', lora_image);
    add_lora('t', lora_text);
    std::sort(out.begin(), out.end(),
              [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
    return out;
}

Tensor lora_delta(const Tensor& features, const Tensor& a, const Tensor& b) {
    if (features.dim(-1) != a.dim(0) || a.dim(1) != b.dim(0) || b.dim(1) != features.dim(-1)) {
        fail(ErrorKind::shape, "lora_delta: features " + shape_str(features.shape()) + ", A " +
                                   shape_str(a.shape()) + ", B " + shape_str(b.shape()));
    }
    return matmul(matmul(features, a), b);
}

Summaries linear_summaries(const Tensor& image_features, const Tensor& text_features,
                           const LinearSummaryWeights& w, std::size_t n_query) {
    // Pooled rows stay (..., 1, d) so the linear map sees a matrix.
    const Tensor pooled_text = mean(merge_token_groups(text_features), -2);
    const Tensor pooled_image = mean(image_features, -2);
    const auto to_queries = [n_query](const Tensor& flat) {
        Shape shape(flat.shape().begin(), flat.shape().end() - 2);
        shape.push_back(n_query);
        shape.push_back(flat.dim(-1) / n_query);
        return reshape(flat, shape);
    };
    return {to_queries(nn::linear(pooled_text, w.text_to_image)),
            to_queries(nn::linear(pooled_image, w.image_to_text))};
}

std::vector<NamedTensor> trainable_registry(const AdapterBank& bank, AblationMode mode) {
    auto all = bank.named();
    const bool train = mode != AblationMode::frozen;
    for (auto& [name, t] : all) t.set_requires_grad(train);
    if (!train) return {};
    return all;
}

std::size_t element_count(const std::vector<NamedTensor>& tensors) {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.numel();
    return n;
}

}  // namespace nearl
