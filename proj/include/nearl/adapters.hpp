#pragma once

#include <map>
#include <optional>
#include <vector>

#include "nearl/backbone.hpp"
#include "nearl/config.hpp"
#include "nearl/nn.hpp"
#include "nearl/oca.hpp"
#include "nearl/useformer.hpp"

namespace nearl {

// Low-rank baseline: Delta f = (f A) B, B zero at initialization.
struct LoraLayerWeights {
    Tensor a;  // D -> r
    Tensor b;  // r -> D
};

// Stand-in for the query module in the no_useformer ablation: the opposing
// tower's mean-pooled features mapped linearly to an (N^q x D^q) summary.
struct LinearSummaryWeights {
    nn::LinearWeights text_to_image;  // D^t -> N^q * D^q, produces z^v
    nn::LinearWeights image_to_text;  // D^v -> N^q * D^q, produces z^t
};

// Every trainable tensor of the model. Which parts exist depends on the
// ablation mode; hook-layer maps are keyed by 1-based encoder layer.
struct AdapterBank {
    ProjectorWeights projectors;
    std::optional<UseformerWeights> useformer;
    std::optional<LinearSummaryWeights> linear_summary;
    std::map<std::size_t, OcaLayerWeights> oca_image;
    std::map<std::size_t, OcaLayerWeights> oca_text;
    std::map<std::size_t, LoraLayerWeights> lora_image;
    std::map<std::size_t, LoraLayerWeights> lora_text;

    // Seeded per tensor name, so construction order never changes values.
    static AdapterBank init(const ModelConfig& config);

    // Name-sorted handles to every tensor in the bank.
    std::vector<NamedTensor> named() const;
};

Tensor lora_delta(const Tensor& features, const Tensor& a, const Tensor& b);

Summaries linear_summaries(const Tensor& image_features, const Tensor& text_features,
                           const LinearSummaryWeights& w, std::size_t n_query);

// The parameters an optimizer may touch in `mode`, name-sorted. Also flips
// requires_grad on bank tensors to match (off everywhere in frozen mode).
std::vector<NamedTensor> trainable_registry(const AdapterBank& bank, AblationMode mode);

std::size_t element_count(const std::vector<NamedTensor>& tensors);

}  // namespace nearl
