#include "nearl/backbone.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "nearl/error.hpp"

namespace nearl {

namespace {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : root_(seed) {}

    Tensor normal(const std::string& name, Shape shape, double std) const {
        Rng rng = root_.stream("backbone." + name);
        return randn(shape, rng, std);
    }

private:
    Rng root_;
};

nn::LayerNormWeights unit_norm(std::size_t d) {
    return {Tensor::full({d}, 1.0), Tensor::zeros({d})};
}

EncoderLayerWeights init_layer(const Initializer& init, const std::string& prefix, std::size_t d,
                               std::size_t d_ffn) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    EncoderLayerWeights w;
    w.ln1 = unit_norm(d);
    w.wq = init.normal(prefix + ".wq", {d, d}, s);
    w.wk = init.normal(prefix + ".wk", {d, d}, s);
    w.wv = init.normal(prefix + ".wv", {d, d}, s);
    w.out = {init.normal(prefix + ".wo", {d, d}, s), Tensor::zeros({d})};
    w.ln2 = unit_norm(d);
    w.mlp.up = {init.normal(prefix + ".mlp.w1", {d, d_ffn}, s), Tensor::zeros({d_ffn})};
    w.mlp.down = {init.normal(prefix + ".mlp.w2", {d_ffn, d},
                              1.0 / std::sqrt(static_cast<double>(d_ffn))),
                  Tensor::zeros({d})};
    return w;
}

void append_layer(std::vector<NamedTensor>& out, const std::string& prefix,
                  const EncoderLayerWeights& w) {
    out.push_back({prefix + ".ln1.gamma", w.ln1.gamma});
    out.push_back({prefix + ".ln1.beta", w.ln1.beta});
    out.push_back({prefix + ".wq", w.wq});
    out.push_back({prefix + ".wk", w.wk});
    out.push_back({prefix + ".wv", w.wv});
    out.push_back({prefix + ".wo", w.out.weight});
    out.push_back({prefix + ".bo", *w.out.bias});
    out.push_back({prefix + ".ln2.gamma", w.ln2.gamma});
    out.push_back({prefix + ".ln2.beta", w.ln2.beta});
    out.push_back({prefix + ".mlp.w1", w.mlp.up.weight});
    out.push_back({prefix + ".mlp.b1", *w.mlp.up.bias});
    out.push_back({prefix + ".mlp.w2", w.mlp.down.weight});
    out.push_back({prefix + ".mlp.b2", *w.mlp.down.bias});
}

// Broadcasts a (rows x d) tensor over the leading dims of `like`.
Tensor expand_rows(const Tensor& rows, const Shape& lead) {
    Shape shape = lead;
    shape.push_back(rows.dim(0));
    shape.push_back(rows.dim(1));
    return add(Tensor::zeros(shape), rows);
}

}  // namespace

BackboneWeights BackboneWeights::init(const ModelConfig& c) {
    const Initializer init(c.seed);
    BackboneWeights w;
    w.image.patch_embed = {
        init.normal("image.patch_embed.w", {c.patch_dim, c.d_image},
                    1.0 / std::sqrt(static_cast<double>(c.patch_dim))),
        Tensor::zeros({c.d_image})};
    w.image.global_token = init.normal("image.global_token", {1, c.d_image}, 1.0);
    w.image.positions = init.normal("image.positions", {c.n_patches + 1, c.d_image}, 0.1);
    for (std::size_t l = 1; l <= c.n_layers; ++l) {
        w.image.layers.push_back(
            init_layer(init, "image.layer" + std::to_string(l), c.d_image, c.d_ffn_backbone));
    }
    w.image.ln_post = unit_norm(c.d_image);

    w.text.token_embedding = init.normal("text.token_embedding", {c.vocab_size, c.d_text}, 1.0);
    w.text.positions = init.normal("text.positions", {c.n_text_tokens, c.d_text}, 0.1);
    for (std::size_t l = 1; l <= c.n_layers; ++l) {
        w.text.layers.push_back(
            init_layer(init, "text.layer" + std::to_string(l), c.d_text, c.d_ffn_backbone));
    }
    w.text.ln_final = unit_norm(c.d_text);
    return w;
}

std::vector<NamedTensor> BackboneWeights::named() const {
    std::vector<NamedTensor> out;
    out.push_back({"backbone.image.patch_embed.w", image.patch_embed.weight});
    out.push_back({"backbone.image.patch_embed.b", *image.patch_embed.bias});
    out.push_back({"backbone.image.global_token", image.global_token});
    out.push_back({"backbone.image.positions", image.positions});
    for (std::size_t l = 0; l < image.layers.size(); ++l) {
        append_layer(out, "backbone.image.layer" + std::to_string(l + 1), image.layers[l]);
    }
    out.push_back({"backbone.image.ln_post.gamma", image.ln_post.gamma});
    out.push_back({"backbone.image.ln_post.beta", image.ln_post.beta});
    out.push_back({"backbone.text.token_embedding", text.token_embedding});
    out.push_back({"backbone.text.positions", text.positions});
    for (std::size_t l = 0; l < text.layers.size(); ++l) {
        append_layer(out, "backbone.text.layer" + std::to_string(l + 1), text.layers[l]);
    }
    out.push_back({"backbone.text.ln_final.gamma", text.ln_final.gamma});
    out.push_back({"backbone.text.ln_final.beta", text.ln_final.beta});
    std::sort(out.begin(), out.end(),
              [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
    return out;
}

std::uint64_t checksum(const std::vector<NamedTensor>& tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : tensors) {
        h = fnv1a64(name.data(), name.size(), h);
        for (double v : t.values()) {
            static_assert(std::endian::native == std::endian::little);
            h = fnv1a64(&v, sizeof v, h);
        }
    }
    return h;
}

std::uint64_t BackboneWeights::checksum() const { return nearl::checksum(named()); }

Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w) {
    const double d = static_cast<double>(x.dim(-1));
    const Tensor h = nn::layernorm(x, w.ln1);
    const Tensor attended = nn::cross_attention(h, h, w.wq, w.wk, w.wv, d);
    const Tensor x1 = x + nn::linear(attended, w.out);
    return x1 + nn::ffn(nn::layernorm(x1, w.ln2), w.mlp);
}

Tensor embed_image(const Tensor& images, const ImageTowerWeights& w, const ModelConfig& c) {
    if (images.rank() != 3 || images.dim(1) != c.n_patches || images.dim(2) != c.patch_dim) {
        fail(ErrorKind::dim_mismatch, "image batch " + shape_str(images.shape()) +
                                          " does not match (B, " + std::to_string(c.n_patches) +
                                          ", " + std::to_string(c.patch_dim) + ")");
    }
    const Tensor patches = nn::linear(images, w.patch_embed);
    const Tensor global = expand_rows(w.global_token, {images.dim(0)});
    return concat({global, patches}, 1) + w.positions;
}

Tensor embed_text(const PromptBatch& prompts, const TextTowerWeights& w, const ModelConfig& c) {
    for (const auto& seq : prompts.ids) {
        if (seq.size() != c.n_text_tokens) {
            fail(ErrorKind::dim_mismatch, "prompt length " + std::to_string(seq.size()) +
                                              " differs from n_text_tokens " +
                                              std::to_string(c.n_text_tokens));
        }
        for (auto id : seq) {
            if (id >= w.token_embedding.dim(0)) {
                fail(ErrorKind::vocabulary, "token id " + std::to_string(id) +
                                                " outside vocabulary of " +
                                                std::to_string(w.token_embedding.dim(0)));
            }
        }
    }
    const auto ids = prompts.flat_ids();
    const Tensor tokens = nn::embed(ids, w.token_embedding);
    const Tensor grouped =
        reshape(tokens, {prompts.n_classes(), c.n_text_tokens, w.token_embedding.dim(1)});
    return grouped + w.positions;
}

std::vector<Tensor> encode_image_frozen(const Tensor& images, const BackboneWeights& weights,
                                        const ModelConfig& config) {
    std::vector<Tensor> trace = {embed_image(images, weights.image, config)};
    for (const auto& layer : weights.image.layers) trace.push_back(encoder_layer(trace.back(), layer));
    return trace;
}

std::vector<Tensor> encode_text_frozen(const PromptBatch& prompts, const BackboneWeights& weights,
                                       const ModelConfig& config) {
    std::vector<Tensor> trace = {embed_text(prompts, weights.text, config)};
    for (const auto& layer : weights.text.layers) trace.push_back(encoder_layer(trace.back(), layer));
    return trace;
}

Tensor global_feature(const Tensor& final_image, const ImageTowerWeights& w) {
    const Tensor row = slice(final_image, -2, 0, 1);
    Shape shape(final_image.shape().begin(), final_image.shape().end() - 2);
    shape.push_back(final_image.dim(-1));
    return nn::layernorm(reshape(row, shape), w.ln_post);
}

Tensor eos_features(const Tensor& final_text, const TextTowerWeights& w,
                    const PromptBatch& prompts) {
    return nn::layernorm(gather_positions(final_text, prompts.eos_positions), w.ln_final);
}

JointFeatures project_joint(const Tensor& global, const Tensor& eos, const ProjectorWeights& w) {
    const Tensor v = matmul(global, w.image);
    const Tensor s = matmul(eos, w.text);
    return {nn::l2_normalize_rows(v), nn::l2_normalize_rows(s)};
}

Tensor cosine_logits(const Tensor& v, const Tensor& s, double temperature) {
    if (!(temperature > 0.0)) fail(ErrorKind::config, "temperature must be positive");
    if (v.rank() != 2) fail(ErrorKind::shape, "cosine_logits: v must be (B, d)");
    if (s.rank() == 2) return scale(matmul(v, transpose(s)), 1.0 / temperature);
    if (s.rank() != 3 || s.dim(0) != v.dim(0)) {
        fail(ErrorKind::shape, "cosine_logits: text features " + shape_str(s.shape()) +
                                   " do not match image batch " + shape_str(v.shape()));
    }
    const Tensor rows = reshape(v, {v.dim(0), 1, v.dim(1)});
    const Tensor logits = matmul(rows, transpose(s));
    return scale(reshape(logits, {v.dim(0), s.dim(1)}), 1.0 / temperature);
}

}  // namespace nearl
