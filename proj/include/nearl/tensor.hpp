#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nearl/rng.hpp"

namespace nearl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

// Dense row-major float64 tensor with an optional reverse-mode tape.
//
// Tensor is a shared handle: copies alias the same storage, which is how
// parameters are shared between call sites. Every differentiable op records
// a tape node when at least one input requires grad; backward() walks that
// graph from a scalar loss and accumulates d(loss)/d(tensor) into every
// reachable tensor that requires grad.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);
    static Tensor identity(std::size_t n, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const;
    // Negative axes count from the end.
    std::size_t dim(int axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    // Direct storage access for optimizer updates and finite differences.
    std::span<double> mutable_values();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Populates gradients of everything reachable from this scalar.
    void backward() const;

    // Copy of the values with no tape link and requires_grad = false.
    Tensor detach() const;
    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

    detail::TensorImpl& impl() const;
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    const std::shared_ptr<detail::TensorImpl>& handle() const noexcept { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Disables tape recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

// I.i.d. N(0, scale^2) entries.
Tensor randn(const Shape& shape, Rng& rng, double scale, bool requires_grad = false);

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
// Exact form: x * Phi(x).
Tensor gelu(const Tensor& x);

// (..., n, k) x (..., k, m). Either operand may omit the batch dims, in
// which case it is broadcast over the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = true);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = true);

// Max-subtracted; each slice along axis sums to one.
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
// Row gather from a (rows x d) table.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
// x: (..., C, N, d); picks token positions[c] from group c -> (..., C, d).
Tensor gather_positions(const Tensor& x, std::span<const std::size_t> positions);

// Euclidean inner product over all elements, as a scalar tensor.
Tensor inner(const Tensor& a, const Tensor& b);
Tensor norm_sq(const Tensor& a);

namespace detail {

using BackwardFn = std::function<void(TensorImpl& out)>;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    BackwardFn backward;
};

std::vector<double>& grad_buffer(TensorImpl& t);

// Wraps a freshly computed result, attaching a tape node when any input
// requires grad and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<std::reference_wrapper<const Tensor>> inputs,
                   BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

}  // namespace detail

}  // namespace nearl
