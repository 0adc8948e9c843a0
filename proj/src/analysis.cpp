#include "nearl/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "nearl/error.hpp"

namespace nearl {

ParamAudit count_trainable(const ModelConfig& c) {
    c.validate();
    ParamAudit a;
    if (c.mode == AblationMode::frozen) return a;
    const std::size_t hooks = c.hook_layers().size();
    const std::size_t dq = c.d_query;
    const auto add = [&a](std::string name, std::size_t n) { a.components.push_back({std::move(name), n}); };

    add("projectors", (c.d_image + c.d_text) * c.d_joint);
    std::size_t shared_attention = 0;
    if (c.mode == AblationMode::full || c.mode == AblationMode::no_or) {
        shared_attention = 3 * dq * dq;
        add("useformer.input_projections", (c.d_image + c.d_text) * dq);
        add("useformer.shared_attention", shared_attention);
        add("useformer.ffn", c.useformer_depth * (2 * dq * c.d_ffn_useformer + c.d_ffn_useformer + dq));
        add("useformer.queries", 2 * c.n_query * dq);
    }
    if (c.mode == AblationMode::no_useformer) {
        const std::size_t out = c.n_query * dq;
        add("summary.linear", (c.d_image + c.d_text) * out + 2 * out);
    }
    if (c.mode == AblationMode::lora) {
        add("lora.image", hooks * 2 * c.d_image * c.rank);
        add("lora.text", hooks * 2 * c.d_text * c.rank);
    } else {
        add("oca.image", hooks * (c.d_image * c.rank + dq * c.rank + c.rank * c.d_image));
        add("oca.text", hooks * (c.d_text * c.rank + dq * c.rank + c.rank * c.d_text));
    }
    for (const auto& comp : a.components) a.total += comp.count;
    a.alternate_total = a.total + (hooks > 0 ? (hooks - 1) * shared_attention : 0);
    return a;
}

std::string audit_report(const ModelConfig& c, const ParamAudit& a) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line,
                  "mode %s  L=%zu D^v=%zu D^t=%zu D^q=%zu N^q=%zu M=%zu r=%zu d_ffn=%zu d_joint=%zu hooks=%zu\n",
                  std::string(to_string(c.mode)).c_str(), c.n_layers, c.d_image, c.d_text, c.d_query,
                  c.n_query, c.useformer_depth, c.rank, c.d_ffn_useformer, c.d_joint,
                  c.hook_layers().size());
    out += line;
    for (const auto& comp : a.components) {
        std::snprintf(line, sizeof line, "%-32s %12zu\n", comp.name.c_str(), comp.count);
        out += line;
    }
    std::snprintf(line, sizeof line, "%-32s %12zu\n", "total", a.total);
    out += line;
    std::snprintf(line, sizeof line, "%-32s %12zu\n", "alternate_total (per-layer W_QKV)",
                  a.alternate_total);
    out += line;
    const bool in_band = static_cast<double>(a.total) >= kAuditBandLow &&
                         static_cast<double>(a.total) <= kAuditBandHigh;
    std::snprintf(line, sizeof line, "published claim %.2fM; band [%.1fM, %.1fM]; total %s band (%.4fM)\n",
                  kPublishedParamClaim / 1e6, kAuditBandLow / 1e6, kAuditBandHigh / 1e6,
                  in_band ? "inside" : "outside", static_cast<double>(a.total) / 1e6);
    out += line;
    return out;
}

namespace {

std::size_t hist_bin(double cosine) {
    const double pos = (cosine + 1.0) * 0.5 * static_cast<double>(kHistogramBins);
    const auto bin = static_cast<long>(std::floor(pos));
    return static_cast<std::size_t>(std::clamp<long>(bin, 0, static_cast<long>(kHistogramBins) - 1));
}

std::pair<double, double> moments(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double s = 0.0;
    for (double x : xs) s += x;
    const double mean = s / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size()))};
}

void require_matrix(const Tensor& x, const char* what) {
    if (x.rank() != 2) fail(ErrorKind::shape, std::string(what) + " expects an (n, d) matrix, got " + shape_str(x.shape()));
}

}  // namespace

CosineReport cosine_stats(const Tensor& features, std::span<const std::size_t> labels) {
    require_matrix(features, "cosine_stats");
    const std::size_t n = features.dim(0);
    const std::size_t d = features.dim(1);
    if (labels.size() != n) fail(ErrorKind::shape, "cosine_stats: label count differs from row count");
    if (n < 2) fail(ErrorKind::config, "cosine_stats needs at least 2 samples");
    if (std::all_of(labels.begin(), labels.end(), [&](std::size_t y) { return y == labels[0]; })) {
        fail(ErrorKind::config, "cosine_stats needs at least 2 classes");
    }
    const auto x = features.values();
    std::vector<double> unit(x.begin(), x.end());
    for (std::size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += x[i * d + j] * x[i * d + j];
        if (!(ss > 0.0)) fail(ErrorKind::config, "cosine_stats: row " + std::to_string(i) + " has zero norm");
        const double norm = std::sqrt(ss);
        for (std::size_t j = 0; j < d; ++j) unit[i * d + j] /= norm;
    }
    CosineReport r;
    std::vector<double> intra;
    std::vector<double> inter;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += unit[a * d + j] * unit[b * d + j];
            dot = std::clamp(dot, -1.0, 1.0);
            if (labels[a] == labels[b]) {
                intra.push_back(dot);
                ++r.intra_hist[hist_bin(dot)];
            } else {
                inter.push_back(dot);
                ++r.inter_hist[hist_bin(dot)];
            }
        }
    }
    std::tie(r.intra_mean, r.intra_std) = moments(intra);
    std::tie(r.inter_mean, r.inter_std) = moments(inter);
    r.intra_pairs = intra.size();
    r.inter_pairs = inter.size();
    r.gap = r.intra_mean - r.inter_mean;
    return r;
}

namespace {

using Matrix = std::vector<double>;  // row-major d x d

std::vector<double> mat_vec(const Matrix& m, const std::vector<double>& v) {
    const std::size_t d = v.size();
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i] += m[i * d + j] * v[j];
    return out;
}

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void apply_sign_convention(std::vector<double>& v) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    }
    if (v[arg] < 0.0)
        for (double& x : v) x = -x;
}

// Dominant eigenpair of a symmetric PSD matrix; v is orthogonalized against
// `exclude` every iteration to stay in the deflated subspace.
std::pair<double, std::vector<double>> power_iteration(const Matrix& m, std::vector<double> v,
                                                       const std::vector<std::vector<double>>& exclude,
                                                       double scale) {
    const auto project_out = [&exclude](std::vector<double>& w) {
        for (const auto& e : exclude) {
            double dot = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) dot += w[i] * e[i];
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= dot * e[i];
        }
    };
    project_out(v);
    double nv = norm2(v);
    for (double& x : v) x /= nv;
    double lambda = 0.0;
    for (std::size_t it = 0; it < kPcaMaxIterations; ++it) {
        std::vector<double> w = mat_vec(m, v);
        project_out(w);
        const double nw = norm2(w);
        if (nw <= 1e-14 * scale) return {0.0, v};  // remaining subspace carries no variance
        for (double& x : w) x /= nw;
        lambda = nw;
        double diff = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) diff = std::max(diff, std::abs(w[i] - v[i]));
        v = std::move(w);
        if (diff < kPcaTolerance) break;
    }
    return {lambda, v};
}

}  // namespace

Pca2 pca2(const Tensor& features) {
    require_matrix(features, "pca2");
    const std::size_t n = features.dim(0);
    const std::size_t d = features.dim(1);
    if (n < 3) fail(ErrorKind::config, "pca2 needs at least 3 samples");
    const auto x = features.values();
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mu[j] += x[i * d + j];
    for (double& m : mu) m /= static_cast<double>(n);
    std::vector<double> centered(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = x[i * d + j] - mu[j];
    Matrix cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += centered[i * d + a] * centered[i * d + b];
    for (double& c : cov) c /= static_cast<double>(n - 1);
    double trace = 0.0;
    for (std::size_t a = 0; a < d; ++a) trace += cov[a * d + a];
    if (!(trace > 0.0)) fail(ErrorKind::config, "pca2: input has zero variance (rank 0)");

    Rng rng = Rng(0x9ca2).stream("pca2.start");
    std::vector<std::vector<double>> axes;
    Pca2 out;
    for (std::size_t k = 0; k < 2; ++k) {
        std::vector<double> start(d);
        for (double& s : start) s = rng.normal();
        auto [lambda, v] = power_iteration(cov, start, axes, trace);
        apply_sign_convention(v);
        out.eigenvalues[k] = lambda;
        out.explained[k] = lambda / trace;
        axes.push_back(std::move(v));
    }
    std::vector<double> comps;
    for (const auto& a : axes) comps.insert(comps.end(), a.begin(), a.end());
    std::vector<double> coords(n * 2, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t j = 0; j < d; ++j) coords[i * 2 + k] += centered[i * d + j] * axes[k][j];
    out.components = Tensor({2, d}, std::move(comps));
    out.coords = Tensor({n, 2}, std::move(coords));
    return out;
}

std::pair<double, double> chance_band(std::size_t n, std::size_t classes, double level) {
    if (n == 0 || classes == 0) fail(ErrorKind::config, "chance_band needs n >= 1 and classes >= 1");
    const double p = 1.0 / static_cast<double>(classes);
    const double tail = (1.0 - level) / 2.0;
    // log pmf via lgamma keeps large n finite.
    std::vector<double> pmf(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        const double kk = static_cast<double>(k);
        const double nn = static_cast<double>(n);
        double lp = std::lgamma(nn + 1.0) - std::lgamma(kk + 1.0) - std::lgamma(nn - kk + 1.0);
        if (k > 0) lp += kk * std::log(p);
        if (k < n) lp += (nn - kk) * std::log1p(-p);
        pmf[k] = p == 1.0 ? (k == n ? 1.0 : 0.0) : std::exp(lp);
    }
    std::size_t lo = 0;
    double lower_tail = 0.0;
    while (lo < n && lower_tail + pmf[lo] <= tail) lower_tail += pmf[lo++];
    std::size_t hi = n;
    double upper_tail = 0.0;
    while (hi > 0 && upper_tail + pmf[hi] <= tail) upper_tail += pmf[hi--];
    return {static_cast<double>(lo) / static_cast<double>(n), static_cast<double>(hi) / static_cast<double>(n)};
}

Tensor image_embeddings(const Model& model, const Split& split, std::size_t batch_size) {
    if (split.size() == 0) fail(ErrorKind::config, "cannot embed an empty split");
    NoGradGuard no_grad;
    std::vector<double> data;
    for (std::size_t start = 0; start < split.size(); start += batch_size) {
        const std::size_t end = std::min(split.size(), start + batch_size);
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const ForwardResult f = adapted_forward(model, split.images(idx));
        const auto v = f.joint.v.values();
        data.insert(data.end(), v.begin(), v.end());
    }
    return Tensor({split.size(), model.config.d_joint}, std::move(data));
}

std::string_view to_string(AblationSuite suite) noexcept {
    switch (suite) {
        case AblationSuite::modules: return "modules";
        case AblationSuite::depth: return "depth";
        case AblationSuite::rank: return "rank";
        case AblationSuite::layer_groups: return "layer_groups";
    }
    return "unknown";
}

AblationSuite parse_ablation_suite(std::string_view text) {
    if (text == "modules") return AblationSuite::modules;
    if (text == "depth" || text == "depth_M") return AblationSuite::depth;
    if (text == "rank" || text == "rank_r") return AblationSuite::rank;
    if (text == "layer_groups") return AblationSuite::layer_groups;
    fail(ErrorKind::config, "unknown ablation suite '" + std::string(text) +
                                "' (expected modules, depth, rank or layer_groups)");
}

std::vector<AblationVariant> ablation_grid(const ModelConfig& base, AblationSuite suite) {
    base.validate();
    std::vector<AblationVariant> grid;
    switch (suite) {
        case AblationSuite::modules:
            for (AblationMode m : {AblationMode::lora, AblationMode::no_useformer, AblationMode::no_or,
                                   AblationMode::full}) {
                ModelConfig c = base;
                c.mode = m;
                grid.push_back({std::string(to_string(m)), c});
            }
            break;
        case AblationSuite::depth:
            for (std::size_t m : {1, 2, 4, 6}) {
                ModelConfig c = base;
                c.mode = AblationMode::full;
                c.useformer_depth = m;
                grid.push_back({"M=" + std::to_string(m), c});
            }
            break;
        case AblationSuite::rank:
            for (std::size_t r : {2, 4, 8, 16}) {
                ModelConfig c = base;
                c.mode = AblationMode::full;
                c.rank = r;
                grid.push_back({"r=" + std::to_string(r), c});
            }
            break;
        case AblationSuite::layer_groups: {
            const std::size_t L = base.n_layers;
            if (L < 3) fail(ErrorKind::config, "layer_groups suite needs n_layers >= 3");
            const auto cut = [L](std::size_t k) { return (k * L + 1) / 3; };
            const std::size_t b1 = cut(1);
            const std::size_t b2 = cut(2);
            const std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> groups = {
                {"low", {1, b1}}, {"mid", {b1 + 1, b2}}, {"high", {b2 + 1, L}}, {"all", {1, L}}};
            for (const auto& [name, range] : groups) {
                ModelConfig c = base;
                c.mode = AblationMode::full;
                std::vector<std::size_t> mask;
                for (std::size_t l = range.first; l <= range.second; ++l) mask.push_back(l);
                c.layer_mask = mask;
                grid.push_back({name + ":" + std::to_string(range.first) + "-" + std::to_string(range.second), c});
            }
            break;
        }
    }
    return grid;
}

std::vector<AblationRow> run_ablations(const ModelConfig& base, const TrainConfig& tc,
                                       const Dataset& dataset, AblationSuite suite) {
    std::vector<AblationRow> rows;
    for (const auto& variant : ablation_grid(base, suite)) {
        const auto t0 = std::chrono::steady_clock::now();
        Model model = Model::build(variant.config);
        train(model, dataset, tc);
        const EvalResult test = evaluate(model, dataset.test);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back({variant.name, test.metrics.accuracy, test.metrics.macro_f1,
                        element_count(trainable_registry(model.bank, variant.config.mode)), secs});
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "variant,acc,f1,trainable_params,seconds\n";
    char line[256];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%zu,%.3f\n", r.variant.c_str(), r.acc, r.f1,
                      r.trainable_params, r.seconds);
        out += line;
    }
    return out;
}

}  // namespace nearl
