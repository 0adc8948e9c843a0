#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nearl/config.hpp"
#include "nearl/dataset.hpp"
#include "nearl/model.hpp"

namespace nearl {

// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// Contrastive objective over cosine logits: v (B, d), s (C, d) or (B, C, d).
Tensor ce_loss(const Tensor& v, const Tensor& s, std::span<const std::size_t> labels,
               double temperature);

// Row-wise argmax of (B, C) logits; ties go to the lowest class index.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

struct ClassMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    // confusion[true][predicted]
    std::vector<std::vector<std::size_t>> confusion;
    std::vector<double> per_class_f1;
};

// Per-class F1 is 0 when the class is neither present nor predicted.
ClassMetrics classification_metrics(std::span<const std::size_t> predictions,
                                    std::span<const std::size_t> labels, std::size_t n_classes);

struct AdamState {
    std::size_t step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

// One bias-corrected Adam update of every parameter from its accumulated
// gradient (parameters with no gradient count as zero gradient). Throws
// Error(non_finite) naming the first parameter with a non-finite gradient,
// before anything is modified.
void adam_step(const std::vector<NamedTensor>& params, AdamState& state, const TrainConfig& tc);

struct EvalResult {
    double loss = 0.0;
    ClassMetrics metrics;
    std::vector<std::size_t> predictions;
};

// Gradient-free pass over a split. Throws Error(config) on an empty split.
EvalResult evaluate(const Model& model, const Split& split, std::size_t batch_size = 64);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double train_f1 = 0.0;
    std::optional<EvalResult> val;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_acc = -1.0;
    std::vector<NamedTensor> best_bank;  // detached adapter values at best_epoch
    std::uint64_t backbone_checksum_before = 0;
    std::uint64_t backbone_checksum_after = 0;
    // Orthogonality probes gathered at every optimizer step.
    std::size_t ortho_checks = 0;
    OrthoStats ortho;
};

// Trains the model's adapter bank in place and finally restores the
// best-validation weights. Training loss per epoch is the mean of per-sample
// losses summed in sample order, so it does not depend on the shuffle.
TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& tc);

// `epoch,split,loss,acc,f1` with 6-decimal values.
std::string metrics_csv(const TrainResult& result);

}  // namespace nearl
