#include "nearl/config.hpp"

#include <algorithm>
#include <cmath>

#include "nearl/error.hpp"

namespace nearl {

std::string_view to_string(AblationMode mode) noexcept {
    switch (mode) {
        case AblationMode::full: return "full";
        case AblationMode::no_or: return "no_or";
        case AblationMode::no_useformer: return "no_useformer";
        case AblationMode::lora: return "lora";
        case AblationMode::frozen: return "frozen";
    }
    return "full";
}

AblationMode parse_ablation_mode(std::string_view text) {
    for (auto m : {AblationMode::full, AblationMode::no_or, AblationMode::no_useformer,
                   AblationMode::lora, AblationMode::frozen}) {
        if (to_string(m) == text) return m;
    }
    fail(ErrorKind::config, "unknown ablation mode '" + std::string(text) + "'");
}

std::string_view to_string(OrthoTarget target) noexcept {
    return target == OrthoTarget::output ? "output" : "input";
}

OrthoTarget parse_ortho_target(std::string_view text) {
    if (text == "output") return OrthoTarget::output;
    if (text == "input") return OrthoTarget::input;
    fail(ErrorKind::config, "unknown ortho_target '" + std::string(text) + "'");
}

namespace {
void require(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::config, what);
}
}  // namespace

void ModelConfig::validate() const {
    const std::pair<const char*, std::size_t> dims[] = {
        {"d_image", d_image},
        {"d_text", d_text},
        {"d_query", d_query},
        {"n_query", n_query},
        {"n_patches", n_patches},
        {"n_text_tokens", n_text_tokens},
        {"useformer_depth", useformer_depth},
        {"rank", rank},
        {"n_layers", n_layers},
        {"n_classes", n_classes},
        {"d_ffn_backbone", d_ffn_backbone},
        {"d_ffn_useformer", d_ffn_useformer},
        {"d_joint", d_joint},
        {"patch_dim", patch_dim},
        {"vocab_size", vocab_size},
    };
    for (const auto& [name, value] : dims) {
        require(value >= 1, std::string(name) + " must be >= 1");
    }
    require(rank <= std::min(d_image, d_text), "rank must not exceed min(d_image, d_text)");
    require(std::isfinite(temperature) && temperature > 0.0, "temperature must be positive");
    require(attention_heads == 1, "only attention_heads = 1 is supported");
    require(std::isfinite(ortho_eps) && ortho_eps >= 0.0, "ortho_eps must be non-negative");
    require(class_names.size() == n_classes,
            "class_names has " + std::to_string(class_names.size()) + " entries, n_classes is " +
                std::to_string(n_classes));
    require(!modality.empty(), "modality must be non-empty");
    if (layer_mask) {
        for (std::size_t layer : *layer_mask) {
            require(layer >= 1 && layer <= n_layers,
                    "layer_mask entry " + std::to_string(layer) + " outside 1.." +
                        std::to_string(n_layers));
        }
        auto sorted = *layer_mask;
        std::sort(sorted.begin(), sorted.end());
        require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
                "layer_mask has duplicate entries");
    }
}

bool ModelConfig::is_hooked(std::size_t layer) const {
    if (!layer_mask) return layer >= 1 && layer <= n_layers;
    return std::find(layer_mask->begin(), layer_mask->end(), layer) != layer_mask->end();
}

std::vector<std::size_t> ModelConfig::hook_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t l = 1; l <= n_layers; ++l) {
        if (is_hooked(l)) out.push_back(l);
    }
    return out;
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.d_image = 8;
    c.d_text = 6;
    c.d_query = 4;
    c.n_query = 2;
    c.n_patches = 4;
    c.n_text_tokens = 6;
    c.useformer_depth = 2;
    c.rank = 2;
    c.n_layers = 2;
    c.n_classes = 2;
    c.d_ffn_backbone = 16;
    c.d_ffn_useformer = 8;
    c.d_joint = 4;
    c.patch_dim = 4;
    return c;
}

ModelConfig ModelConfig::clip_b16_audit() {
    ModelConfig c;
    c.d_image = 768;
    c.d_text = 512;
    c.d_query = 128;
    c.n_query = 32;
    c.n_patches = 196;
    c.n_text_tokens = 77;
    c.useformer_depth = 6;
    c.rank = 8;
    c.n_layers = 12;
    c.d_ffn_backbone = 3072;
    c.d_ffn_useformer = 256;
    c.d_joint = 512;
    c.patch_dim = 768;
    c.vocab_size = 49408;
    return c;
}

void TrainConfig::validate() const {
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(std::isfinite(learning_rate) && learning_rate >= 0.0,
            "learning_rate must be non-negative");
    require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
    require(adam_eps > 0.0, "adam_eps must be positive");
    require(metrics_every >= 1, "metrics_every must be >= 1");
    require(ortho_tolerance > 0.0, "ortho_tolerance must be positive");
}

}  // namespace nearl
