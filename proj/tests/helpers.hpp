#pragma once

#include <cmath>
#include <cstring>
#include <span>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nearl/backbone.hpp"
#include "nearl/model.hpp"
#include "nearl/rng.hpp"
#include "nearl/tensor.hpp"

namespace testing {

inline nearl::Tensor random_tensor(const nearl::Shape& shape, nearl::Rng& rng, double scale = 1.0,
                                   bool requires_grad = false) {
    return nearl::randn(shape, rng, scale, requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
    }
    return true;
}

struct GradCheck {
    std::string name;
    double rel_error = 0.0;
    double analytic_norm = 0.0;
};

// Compares backward() against central differences for every listed tensor.
// rel_error = |a - n| / (|a| + |n|), or 0 when both are below `floor`.
inline std::vector<GradCheck> check_gradients(const std::function<nearl::Tensor()>& loss_fn,
                                              const std::vector<nearl::NamedTensor>& params,
                                              double h = 1e-6, double floor = 1e-11) {
    for (const auto& p : params) nearl::Tensor(p.tensor).zero_grad();
    loss_fn().backward();
    std::vector<GradCheck> out;
    for (const auto& p : params) {
        nearl::Tensor t = p.tensor;
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad() && t.grad().size() == analytic.size()) {
            std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        }
        std::vector<double> numeric(analytic.size());
        auto w = t.mutable_values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double saved = w[i];
            w[i] = saved + h;
            const double plus = loss_fn().item();
            w[i] = saved - h;
            const double minus = loss_fn().item();
            w[i] = saved;
            numeric[i] = (plus - minus) / (2.0 * h);
        }
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            na += analytic[i] * analytic[i];
            nn += numeric[i] * numeric[i];
        }
        diff = std::sqrt(diff);
        na = std::sqrt(na);
        nn = std::sqrt(nn);
        const double rel = (na + nn) < floor ? 0.0 : diff / (na + nn);
        out.push_back({p.name, rel, na});
    }
    return out;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("nearl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Moves every bank tensor to a generic point (rows ~ N(0, 1/fan_in)), away
// from the near-uniform attention of the small initialization where
// gradients are too small for finite differences to resolve.
inline void randomize_bank(nearl::Model& m) {
    nearl::Rng rng(m.config.seed + 7);
    for (auto& [name, t] : m.bank.named()) {
        nearl::Tensor handle = t;
        const double s = t.rank() >= 2 ? 1.0 / std::sqrt(static_cast<double>(t.dim(-2))) : 0.1;
        for (double& x : handle.mutable_values()) x = s * rng.normal();
    }
}

}  // namespace testing
