#pragma once

#include <vector>

#include "nearl/adapters.hpp"
#include "nearl/backbone.hpp"
#include "nearl/config.hpp"
#include "nearl/oca.hpp"
#include "nearl/prompts.hpp"

namespace nearl {

// Frozen backbone + trainable bank + the class prompts they classify with.
struct Model {
    ModelConfig config;
    BackboneWeights backbone;
    AdapterBank bank;
    PromptBatch prompts;

    // Builds the variant the config's ablation mode describes.
    static Model build(const ModelConfig& config);

    // Backbone followed by bank tensors, each name-sorted.
    std::vector<NamedTensor> named() const;
};

// Throws Error(dim_mismatch) when the bank's tensors disagree with config.
void check_bank(const AdapterBank& bank, const ModelConfig& config);

struct ForwardOptions {
    bool keep_trace = false;
    bool measure_orthogonality = false;
};

struct LayerOrtho {
    std::size_t layer = 0;
    char modality = 'v';
    OrthoStats stats;
};

struct ForwardResult {
    Tensor logits;       // (B, C)
    JointFeatures joint;
    EncoderTrace trace;  // adapted f_k for k = 0..L when requested
    std::vector<LayerOrtho> ortho;
};

// Lockstep pass over both towers. For each encoder layer l = k + 1 the
// frozen layer produces f_{k+1} from the adapted f_k; at hook layers the
// adapter increment computed from (f^v_k, f^t_k) is added on top.
ForwardResult adapted_forward(const Model& model, const Tensor& images,
                              const ForwardOptions& options = {});

// Reference pass with no adapters at all: each tower runs on its own and
// the text tower runs once for the whole batch.
ForwardResult frozen_forward(const Model& model, const Tensor& images,
                             const ForwardOptions& options = {});

}  // namespace nearl
