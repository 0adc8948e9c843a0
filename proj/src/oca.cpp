#include "nearl/oca.hpp"

#include <algorithm>
#include <cmath>

#include "nearl/error.hpp"
#include "nearl/nn.hpp"

namespace nearl {

Tensor oca_delta(const Tensor& features, const Tensor& summaries, const OcaLayerWeights& w) {
    const std::size_t rank = w.down.dim(1);
    if (features.dim(-1) != w.down.dim(0) || summaries.dim(-1) != w.summary.dim(0) ||
        w.summary.dim(1) != rank || w.up.dim(0) != rank) {
        fail(ErrorKind::shape, "oca_delta: features " + shape_str(features.shape()) +
                                   ", summaries " + shape_str(summaries.shape()) +
                                   " do not fit W_d " + shape_str(w.down.shape()) + ", W_p " +
                                   shape_str(w.summary.shape()) + ", W_u " +
                                   shape_str(w.up.shape()));
    }
    const Tensor queries = matmul(features, w.down);
    const Tensor keys = matmul(summaries, w.summary);
    const Tensor fused =
        nn::cross_attention(queries, keys, Tensor{}, Tensor{}, Tensor{}, static_cast<double>(rank));
    return matmul(fused, w.up);
}

Tensor orthogonalize(const Tensor& delta, const Tensor& reference, const OrthoConfig& ortho) {
    if (ortho.eps < 0.0) fail(ErrorKind::config, "orthogonalize: eps must be non-negative");
    if (delta.dim(-1) != reference.dim(-1)) {
        fail(ErrorKind::shape, "orthogonalize: " + shape_str(delta.shape()) + " vs " +
                                   shape_str(reference.shape()));
    }
    const Tensor along = sum(delta * reference, -1);
    const Tensor self = sum(reference * reference, -1);
    const Tensor coeff = along / add_scalar(self, ortho.eps);
    return delta - coeff * reference;
}

Tensor oca_apply(const Tensor& pretrained, const Tensor& increment) {
    if (pretrained.dim(-1) != increment.dim(-1)) {
        fail(ErrorKind::shape, "oca_apply: " + shape_str(pretrained.shape()) + " vs " +
                                   shape_str(increment.shape()));
    }
    return pretrained + increment;
}

void OrthoStats::merge(const OrthoStats& other) {
    rows += other.rows;
    nondegenerate_rows += other.nondegenerate_rows;
    max_abs_cos = std::max(max_abs_cos, other.max_abs_cos);
    max_abs_cos_nondegenerate = std::max(max_abs_cos_nondegenerate, other.max_abs_cos_nondegenerate);
}

OrthoStats measure_orthogonality(const Tensor& raw_delta, const Tensor& delta_perp,
                                 const Tensor& reference) {
    const std::size_t d = delta_perp.dim(-1);
    const std::size_t rows = delta_perp.numel() / d;
    const std::size_t ref_rows = reference.numel() / d;
    if (raw_delta.shape() != delta_perp.shape() || ref_rows == 0 || rows % ref_rows != 0) {
        fail(ErrorKind::shape, "measure_orthogonality: incompatible shapes");
    }
    const auto dv = raw_delta.values();
    const auto pv = delta_perp.values();
    const auto fv = reference.values();
    OrthoStats stats;
    stats.rows = rows;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = pv.data() + r * d;
        const double* raw = dv.data() + r * d;
        const double* f = fv.data() + (r % ref_rows) * d;
        double pf = 0.0, pp = 0.0, ff = 0.0, rr = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            pf += p[j] * f[j];
            pp += p[j] * p[j];
            ff += f[j] * f[j];
            rr += raw[j] * raw[j];
        }
        const double cos = std::abs(pf) / (std::sqrt(pp) * std::sqrt(ff) + 1e-30);
        stats.max_abs_cos = std::max(stats.max_abs_cos, cos);
        if (ff > 0.0 && rr > 0.0 && pp >= 1e-6 * rr) {
            ++stats.nondegenerate_rows;
            stats.max_abs_cos_nondegenerate = std::max(stats.max_abs_cos_nondegenerate, cos);
        }
    }
    return stats;
}

}  // namespace nearl
