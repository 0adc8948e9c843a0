#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nearl {

enum class AblationMode { full, no_or, no_useformer, lora, frozen };

std::string_view to_string(AblationMode mode) noexcept;
AblationMode parse_ablation_mode(std::string_view text);

// Which feature the adapter increment is orthogonalized against: the frozen
// layer's output f_{k+1} (the vector it is summed with) or its input f_k.
enum class OrthoTarget { output, input };

std::string_view to_string(OrthoTarget target) noexcept;
OrthoTarget parse_ortho_target(std::string_view text);

// Architectural hyperparameters for the backbone and the adapters.
struct ModelConfig {
    std::size_t d_image = 64;         // D^v
    std::size_t d_text = 48;          // D^t
    std::size_t d_query = 32;         // D^q
    std::size_t n_query = 8;          // N^q
    std::size_t n_patches = 16;       // N^v, excluding the global token
    std::size_t n_text_tokens = 8;    // N^t
    std::size_t useformer_depth = 2;  // M
    std::size_t rank = 8;             // r
    std::size_t n_layers = 4;         // L, shared by both towers
    std::size_t n_classes = 2;        // C
    double temperature = 1e-2;        // tau
    std::size_t d_ffn_backbone = 128;
    std::size_t d_ffn_useformer = 64;
    std::size_t d_joint = 32;
    std::size_t patch_dim = 16;
    std::size_t vocab_size = 64;
    // Reserved; only single-head attention is implemented.
    std::size_t attention_heads = 1;
    std::uint64_t seed = 0;
    AblationMode mode = AblationMode::full;
    // 1-based encoder layers carrying adapters; nullopt means every layer.
    std::optional<std::vector<std::size_t>> layer_mask;
    double ortho_eps = 1e-8;
    OrthoTarget ortho_target = OrthoTarget::output;
    std::string modality = "xray";
    std::vector<std::string> class_names = {"normal", "pneumonia"};

    // Throws Error(config) on the first violated invariant.
    void validate() const;

    bool is_hooked(std::size_t layer) const;
    std::vector<std::size_t> hook_layers() const;

    // Desk-scale default used by the CLI and acceptance runs.
    static ModelConfig toy();
    // The smallest configuration, used for whole-model gradient checks.
    static ModelConfig tiny();
    // ViT-B/16-sized shapes; only ever used for parameter counting.
    static ModelConfig clip_b16_audit();
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    // Validation metrics are computed every this many epochs (and on the last).
    std::size_t metrics_every = 1;
    // In modes that orthogonalize, assert |cos| stays below the tolerance on
    // every adapted layer at every step.
    bool check_orthogonality = true;
    double ortho_tolerance = 1e-6;

    void validate() const;
};

}  // namespace nearl
