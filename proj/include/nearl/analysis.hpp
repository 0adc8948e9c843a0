#pragma once

#include <array>
#include <string>
#include <vector>

#include "nearl/config.hpp"
#include "nearl/dataset.hpp"
#include "nearl/model.hpp"
#include "nearl/train.hpp"

namespace nearl {

// Closed-form trainable parameter counts, one component per tensor family.
struct ParamAudit {
    struct Component {
        std::string name;
        std::size_t count = 0;
    };
    std::vector<Component> components;
    std::size_t total = 0;
    // Same model with a distinct W_Q/W_K/W_V triple per hooked encoder layer
    // instead of a single shared triple.
    std::size_t alternate_total = 0;
};

inline constexpr double kPublishedParamClaim = 1.46e6;
inline constexpr double kAuditBandLow = 1.0e6;
inline constexpr double kAuditBandHigh = 1.8e6;

ParamAudit count_trainable(const ModelConfig& config);
std::string audit_report(const ModelConfig& config, const ParamAudit& audit);

inline constexpr std::size_t kHistogramBins = 50;

struct CosineReport {
    double intra_mean = 0.0;
    double intra_std = 0.0;
    double inter_mean = 0.0;
    double inter_std = 0.0;
    double gap = 0.0;
    std::size_t intra_pairs = 0;
    std::size_t inter_pairs = 0;
    // Fixed layout: bin b covers [-1 + 2b/50, -1 + 2(b+1)/50), the last bin
    // closed on the right.
    std::array<std::size_t, kHistogramBins> intra_hist{};
    std::array<std::size_t, kHistogramBins> inter_hist{};
};

// All unordered pairs of rows of an (n, d) matrix, split by label equality.
CosineReport cosine_stats(const Tensor& features, std::span<const std::size_t> labels);

struct Pca2 {
    Tensor coords;                    // (n, 2)
    Tensor components;                // (2, d), unit rows
    std::array<double, 2> eigenvalues{};
    std::array<double, 2> explained{};  // fraction of total variance
};

inline constexpr double kPcaTolerance = 1e-10;
inline constexpr std::size_t kPcaMaxIterations = 10000;

// Top-2 principal axes of the sample covariance by power iteration with
// deflation. Each axis is signed so that its largest-magnitude entry is
// positive (first such entry on ties).
Pca2 pca2(const Tensor& features);

// Central two-sided band [lo, hi] of accuracy for a predictor that ignores
// the input: Binomial(n, 1/classes), each tail holding at most (1-level)/2.
std::pair<double, double> chance_band(std::size_t n, std::size_t classes, double level = 0.99);

// Joint-space image embeddings v of a split, (n, d_joint).
Tensor image_embeddings(const Model& model, const Split& split, std::size_t batch_size = 64);

enum class AblationSuite { modules, depth, rank, layer_groups };

std::string_view to_string(AblationSuite suite) noexcept;
AblationSuite parse_ablation_suite(std::string_view text);

struct AblationVariant {
    std::string name;
    ModelConfig config;
};

// The grid of a suite, derived from the base config.
std::vector<AblationVariant> ablation_grid(const ModelConfig& base, AblationSuite suite);

struct AblationRow {
    std::string variant;
    double acc = 0.0;
    double f1 = 0.0;
    std::size_t trainable_params = 0;
    double seconds = 0.0;
};

// Trains every variant on the same data and seeds and scores it on the test
// split with its best-validation weights.
std::vector<AblationRow> run_ablations(const ModelConfig& base, const TrainConfig& tc,
                                       const Dataset& dataset, AblationSuite suite);

// `variant,acc,f1,trainable_params,seconds`.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace nearl
