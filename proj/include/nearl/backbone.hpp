#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nearl/config.hpp"
#include "nearl/nn.hpp"
#include "nearl/prompts.hpp"
#include "nearl/tensor.hpp"

namespace nearl {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Pre-norm transformer layer: x + Wo Attn(LN1 x), then x + FFN(LN2 x).
struct EncoderLayerWeights {
    nn::LayerNormWeights ln1;
    Tensor wq;
    Tensor wk;
    Tensor wv;
    nn::LinearWeights out;
    nn::LayerNormWeights ln2;
    nn::FfnWeights mlp;
};

struct ImageTowerWeights {
    nn::LinearWeights patch_embed;  // patch_dim -> D^v
    Tensor global_token;            // (1 x D^v)
    Tensor positions;               // ((N^v + 1) x D^v)
    std::vector<EncoderLayerWeights> layers;
    nn::LayerNormWeights ln_post;
};

struct TextTowerWeights {
    Tensor token_embedding;  // (vocab x D^t)
    Tensor positions;        // (N^t x D^t)
    std::vector<EncoderLayerWeights> layers;
    nn::LayerNormWeights ln_final;
};

// The frozen two-tower stand-in for a pretrained CLIP. No tensor here ever
// requires grad.
struct BackboneWeights {
    ImageTowerWeights image;
    TextTowerWeights text;

    static BackboneWeights init(const ModelConfig& config);
    // Stable, name-sorted list of handles aliasing the weights.
    std::vector<NamedTensor> named() const;
    // FNV-1a over the little-endian bytes of every tensor, in name order.
    std::uint64_t checksum() const;
};

// Per-layer features of both towers: entry k is f_k, entry 0 the embedded
// input. Image entries are (..., N^v + 1, D^v); text entries (..., C, N^t, D^t).
struct EncoderTrace {
    std::vector<Tensor> image;
    std::vector<Tensor> text;
};

std::uint64_t checksum(const std::vector<NamedTensor>& tensors);

Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w);

// images: (B, N^v, patch_dim). Returns f^v_0 with the global token in row 0.
Tensor embed_image(const Tensor& images, const ImageTowerWeights& w, const ModelConfig& config);
// Returns f^t_0 of shape (C, N^t, D^t).
Tensor embed_text(const PromptBatch& prompts, const TextTowerWeights& w, const ModelConfig& config);

// Runs the frozen image tower; the result has L + 1 entries.
std::vector<Tensor> encode_image_frozen(const Tensor& images, const BackboneWeights& weights,
                                        const ModelConfig& config);
std::vector<Tensor> encode_text_frozen(const PromptBatch& prompts, const BackboneWeights& weights,
                                       const ModelConfig& config);

// v^g: final-layer global token after the output layer norm, (..., D^v).
Tensor global_feature(const Tensor& final_image, const ImageTowerWeights& w);
// EOS-position features after the final layer norm, (..., C, D^t).
Tensor eos_features(const Tensor& final_text, const TextTowerWeights& w,
                    const PromptBatch& prompts);

// Image/text heads into the joint space. Trainable in every non-frozen mode.
struct ProjectorWeights {
    Tensor image;  // (D^v x d_joint)
    Tensor text;   // (D^t x d_joint)
};

// Unit-norm joint-space features: v is (B, d_joint), S is (C, d_joint) or
// (B, C, d_joint) once the text tower has seen the image.
struct JointFeatures {
    Tensor v;
    Tensor s;
};

JointFeatures project_joint(const Tensor& global, const Tensor& eos, const ProjectorWeights& w);

// (v . s_i) / tau for every class, shape (B, C).
Tensor cosine_logits(const Tensor& v, const Tensor& s, double temperature);

}  // namespace nearl
