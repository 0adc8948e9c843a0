#include "nearl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "nearl/error.hpp"

namespace nearl {

using detail::grad_buffer;
using detail::make_result;
using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

namespace {

thread_local bool t_grad_enabled = true;

std::size_t normalize_axis(int axis, std::size_t rank) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        fail(ErrorKind::shape, "axis " + std::to_string(axis) + " out of range for rank " +
                                   std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

// Splits a shape around one axis into (outer, axis, inner) extents.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

// Broadcast bookkeeping: strides of each operand aligned to the output rank,
// zero along broadcast axes.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
    bool same = false;
};

std::vector<std::size_t> aligned_strides(const Shape& shape, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::size_t> strides(r, 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const std::size_t src = shape.size() - 1 - i;
        const std::size_t dst = r - 1 - i;
        strides[dst] = shape[src] == 1 ? 0 : stride;
        stride *= shape[src];
    }
    return strides;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    Broadcast plan;
    if (a == b) {
        plan.out = a;
        plan.same = true;
        return plan;
    }
    const std::size_t r = std::max(a.size(), b.size());
    plan.out.assign(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            fail(ErrorKind::shape, std::string(op) + ": cannot broadcast " + shape_str(a) +
                                       " with " + shape_str(b));
        }
        plan.out[r - 1 - i] = std::max(da, db);
    }
    plan.stride_a = aligned_strides(a, plan.out);
    plan.stride_b = aligned_strides(b, plan.out);
    return plan;
}

template <typename F>
void for_each_broadcast(const Broadcast& plan, F&& f) {
    const std::size_t n = shape_numel(plan.out);
    if (plan.same) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const std::size_t r = plan.out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t oa = 0;
    std::size_t ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, oa, ob);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            oa += plan.stride_a[d];
            ob += plan.stride_b[d];
            if (idx[d] < plan.out[d]) break;
            oa -= plan.stride_a[d] * plan.out[d];
            ob -= plan.stride_b[d] * plan.out[d];
            idx[d] = 0;
        }
    }
}

// Binary elementwise op; da/db give the local partials at (a, b, out).
template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
    const Broadcast plan = plan_broadcast(a.shape(), b.shape(), name);
    std::vector<double> out(shape_numel(plan.out));
    const auto av = a.values();
    const auto bv = b.values();
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = fwd(av[ia], bv[ib]);
    });
    ImplPtr pa = a.handle();
    ImplPtr pb = b.handle();
    return make_result(plan.out, std::move(out), {a, b}, [pa, pb, plan, da, db](TensorImpl& o) {
        const auto& g = o.grad;
        if (pa->requires_grad) {
            auto& ga = grad_buffer(*pa);
            for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                ga[ia] += g[i] * da(pa->data[ia], pb->data[ib], o.data[i]);
            });
        }
        if (pb->requires_grad) {
            auto& gb = grad_buffer(*pb);
            for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                gb[ib] += g[i] * db(pa->data[ia], pb->data[ib], o.data[i]);
            });
        }
    });
}

// Unary elementwise op; df gives dy/dx at (x, y).
template <typename Fwd, typename DF>
Tensor unary(const Tensor& x, Fwd fwd, DF df) {
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    ImplPtr px = x.handle();
    return make_result(x.shape(), std::move(out), {x}, [px, df](TensorImpl& o) {
        auto& gx = grad_buffer(*px);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += o.grad[i] * df(px->data[i], o.data[i]);
        }
    });
}

// C (n x m) += A (n x k) * B (k x m). Each C entry is summed over k in
// ascending order regardless of n, so results do not depend on how many
// rows are batched together.
void gemm_acc(const double* A, const double* B, double* C, std::size_t n, std::size_t k,
              std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        double* c = C + i * m;
        const double* a = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + p * m;
            for (std::size_t j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

// C (k x m) += A^T B with A (n x k), B (n x m).
void gemm_tn_acc(const double* A, const double* B, double* C, std::size_t n, std::size_t k,
                 std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* a = A + i * k;
        const double* b = B + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p];
            double* c = C + p * m;
            for (std::size_t j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

std::vector<double> transposed(const double* src, std::size_t rows, std::size_t cols) {
    std::vector<double> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
    return out;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

std::vector<double>& grad_buffer(TensorImpl& t) {
    if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
    return t.grad;
}

Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<std::reference_wrapper<const Tensor>> inputs,
                   BackwardFn backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (t_grad_enabled) {
        for (const Tensor& in : inputs) {
            if (in.requires_grad()) impl->parents.push_back(in.handle());
        }
        if (!impl->parents.empty()) {
            impl->requires_grad = true;
            impl->backward = std::move(backward);
        }
    }
    return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (t_grad_enabled) {
        for (const Tensor& in : inputs) {
            if (in.requires_grad()) impl->parents.push_back(in.handle());
        }
        if (!impl->parents.empty()) {
            impl->requires_grad = true;
            impl->backward = std::move(backward);
        }
    }
    return Tensor(std::move(impl));
}

}  // namespace detail

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) fail(ErrorKind::shape, "zero-sized dimension in shape " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        fail(ErrorKind::shape, "shape " + shape_str(shape) + " holds " +
                                   std::to_string(shape_numel(shape)) + " elements, got " +
                                   std::to_string(values.size()));
    }
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
    return Tensor({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
    const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    std::vector<double> data;
    for (const auto& row : rows) {
        if (row.size() != cols) fail(ErrorKind::shape, "ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({rows.size(), cols}, std::move(data), requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
    std::vector<double> data(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(data), requires_grad);
}

TensorImpl& Tensor::impl() const {
    if (!impl_) fail(ErrorKind::shape, "use of an undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
std::size_t Tensor::rank() const { return impl().shape.size(); }
std::size_t Tensor::dim(int axis) const { return impl().shape[normalize_axis(axis, rank())]; }
std::size_t Tensor::numel() const { return impl().data.size(); }
std::span<const double> Tensor::values() const { return impl().data; }
std::span<double> Tensor::mutable_values() { return impl().data; }

double Tensor::item() const {
    if (numel() != 1) fail(ErrorKind::shape, "item() on tensor of shape " + shape_str(shape()));
    return impl().data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) fail(ErrorKind::shape, "index rank mismatch");
    std::size_t off = 0;
    std::size_t d = 0;
    for (auto i : index) {
        if (i >= s[d]) fail(ErrorKind::shape, "index out of range for " + shape_str(s));
        off = off * s[d] + i;
        ++d;
    }
    return impl().data[off];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    impl().requires_grad = on;
    if (!on) impl().grad.clear();
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl().grad; }
void Tensor::zero_grad() { impl().grad.clear(); }

Tensor Tensor::detach() const {
    return Tensor(shape(), impl().data, false);
}

void Tensor::backward() const {
    if (numel() != 1) {
        fail(ErrorKind::shape, "backward() needs a scalar loss, got shape " + shape_str(shape()));
    }
    if (!requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (TensorImpl* node : order) {
        if (node->backward) node->grad.assign(node->data.size(), 0.0);
    }
    grad_buffer(*impl_)[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() noexcept { return t_grad_enabled; }

// ---------------------------------------------------------------- ops

Tensor randn(const Shape& shape, Rng& rng, double scale, bool requires_grad) {
    if (shape.empty()) fail(ErrorKind::shape, "randn: empty shape");
    if (!(scale > 0.0)) fail(ErrorKind::shape, "randn: scale must be positive");
    for (auto d : shape) {
        if (d == 0) fail(ErrorKind::shape, "randn: zero-sized dimension in " + shape_str(shape));
    }
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = scale * rng.normal();
    return Tensor(shape, std::move(data), requires_grad);
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; });
}

Tensor neg(const Tensor& x) {
    return unary(
        x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
    return unary(
        x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(
        x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
    return unary(
        x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
    return unary(
        x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        x, [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [=](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const auto mismatch = [&] {
        fail(ErrorKind::shape, "matmul: incompatible shapes " + shape_str(sa) + " and " +
                                   shape_str(sb));
    };
    if (sa.size() < 2 || sb.size() < 2) mismatch();
    const std::size_t n = sa[sa.size() - 2];
    const std::size_t k = sa.back();
    const std::size_t m = sb.back();
    if (sb[sb.size() - 2] != k) mismatch();
    const Shape batch_a(sa.begin(), sa.end() - 2);
    const Shape batch_b(sb.begin(), sb.end() - 2);
    const bool a_batched = !batch_a.empty();
    const bool b_batched = !batch_b.empty();
    if (a_batched && b_batched && batch_a != batch_b) mismatch();

    Shape out_shape = a_batched ? batch_a : batch_b;
    const std::size_t batches = shape_numel(out_shape);
    out_shape.push_back(n);
    out_shape.push_back(m);

    std::vector<double> out(batches * n * m, 0.0);
    const double* A = a.values().data();
    const double* B = b.values().data();
    if (!b_batched) {
        gemm_acc(A, B, out.data(), batches * n, k, m);
    } else {
        for (std::size_t t = 0; t < batches; ++t) {
            const double* At = a_batched ? A + t * n * k : A;
            gemm_acc(At, B + t * k * m, out.data() + t * n * m, n, k, m);
        }
    }

    ImplPtr pa = a.handle();
    ImplPtr pb = b.handle();
    return make_result(out_shape, std::move(out), {a, b},
                       [pa, pb, batches, n, k, m, a_batched, b_batched](TensorImpl& o) {
        const double* G = o.grad.data();
        if (pa->requires_grad) {
            auto& ga = grad_buffer(*pa);
            if (!b_batched) {
                const auto bt = transposed(pb->data.data(), k, m);
                gemm_acc(G, bt.data(), ga.data(), batches * n, m, k);
            } else {
                for (std::size_t t = 0; t < batches; ++t) {
                    const auto bt = transposed(pb->data.data() + t * k * m, k, m);
                    double* dst = a_batched ? ga.data() + t * n * k : ga.data();
                    gemm_acc(G + t * n * m, bt.data(), dst, n, m, k);
                }
            }
        }
        if (pb->requires_grad) {
            auto& gb = grad_buffer(*pb);
            if (!b_batched) {
                gemm_tn_acc(pa->data.data(), G, gb.data(), batches * n, k, m);
            } else {
                for (std::size_t t = 0; t < batches; ++t) {
                    const double* At = a_batched ? pa->data.data() + t * n * k : pa->data.data();
                    gemm_tn_acc(At, G + t * n * m, gb.data() + t * k * m, n, k, m);
                }
            }
        }
    });
}

Tensor transpose(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) fail(ErrorKind::shape, "transpose: rank < 2 for " + shape_str(s));
    const std::size_t rows = s[s.size() - 2];
    const std::size_t cols = s.back();
    const std::size_t batches = x.numel() / (rows * cols);
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
    std::vector<double> out(x.numel());
    const double* src = x.values().data();
    for (std::size_t t = 0; t < batches; ++t) {
        const auto block = transposed(src + t * rows * cols, rows, cols);
        std::copy(block.begin(), block.end(), out.begin() + static_cast<std::ptrdiff_t>(t * rows * cols));
    }
    ImplPtr px = x.handle();
    return make_result(out_shape, std::move(out), {x}, [px, rows, cols, batches](TensorImpl& o) {
        auto& gx = grad_buffer(*px);
        for (std::size_t t = 0; t < batches; ++t) {
            const double* g = o.grad.data() + t * rows * cols;
            double* dst = gx.data() + t * rows * cols;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) dst[i * cols + j] += g[j * rows + i];
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        fail(ErrorKind::shape, "reshape: cannot view " + shape_str(x.shape()) + " as " +
                                   shape_str(shape));
    }
    ImplPtr px = x.handle();
    return make_result(std::move(shape), x.impl().data, {x}, [px](TensorImpl& o) {
        auto& gx = grad_buffer(*px);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
    });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    ImplPtr px = x.handle();
    return make_result({1}, {total}, {x}, [px](TensorImpl& o) {
        auto& gx = grad_buffer(*px);
        for (auto& g : gx) g += o.grad[0];
    });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
    const std::size_t ax = normalize_axis(axis, x.rank());
    const AxisSplit s = split_at(x.shape(), ax);
    Shape out_shape = x.shape();
    if (keepdim) {
        out_shape[ax] = 1;
    } else {
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
        if (out_shape.empty()) out_shape.push_back(1);
    }
    std::vector<double> out(s.outer * s.inner, 0.0);
    const auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t a = 0; a < s.extent; ++a)
            for (std::size_t i = 0; i < s.inner; ++i)
                out[o * s.inner + i] += xv[(o * s.extent + a) * s.inner + i];
    ImplPtr px = x.handle();
    return make_result(out_shape, std::move(out), {x}, [px, s](TensorImpl& o) {
        auto& gx = grad_buffer(*px);
        for (std::size_t u = 0; u < s.outer; ++u)
            for (std::size_t a = 0; a < s.extent; ++a)
                for (std::size_t i = 0; i < s.inner; ++i)
                    gx[(u * s.extent + a) * s.inner + i] += o.grad[u * s.inner + i];
    });
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
    const double n = static_cast<double>(x.dim(axis));
    return scale(sum(x, axis, keepdim), 1.0 / n);
}

Tensor softmax(const Tensor& x, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank());
    const AxisSplit s = split_at(x.shape(), ax);
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            double mx = xv[base];
            for (std::size_t a = 1; a < s.extent; ++a) mx = std::max(mx, xv[base + a * s.inner]);
            double total = 0.0;
            for (std::size_t a = 0; a < s.extent; ++a) {
                const double e = std::exp(xv[base + a * s.inner] - mx);
                out[base + a * s.inner] = e;
                total += e;
            }
            for (std::size_t a = 0; a < s.extent; ++a) out[base + a * s.inner] /= total;
        }
    }
    ImplPtr px = x.handle();
    return make_result(x.shape(), std::move(out), {x}, [px, s](TensorImpl& o) {
        auto& gx = grad_buffer(*px);
        for (std::size_t u = 0; u < s.outer; ++u) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = u * s.extent * s.inner + i;
                double dot = 0.0;
                for (std::size_t a = 0; a < s.extent; ++a) {
                    const std::size_t at = base + a * s.inner;
                    dot += o.grad[at] * o.data[at];
                }
                for (std::size_t a = 0; a < s.extent; ++a) {
                    const std::size_t at = base + a * s.inner;
                    gx[at] += o.data[at] * (o.grad[at] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& x, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank());
    const AxisSplit s = split_at(x.shape(), ax);
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            double mx = xv[base];
            for (std::size_t a = 1; a < s.extent; ++a) mx = std::max(mx, xv[base + a * s.inner]);
            double total = 0.0;
            for (std::size_t a = 0; a < s.extent; ++a) total += std::exp(xv[base + a * s.inner] - mx);
            const double lse = mx + std::log(total);
            for (std::size_t a = 0; a < s.extent; ++a)
                out[base + a * s.inner] = xv[base + a * s.inner] - lse;
        }
    }
    ImplPtr px = x.handle();
    return make_result(x.shape(), std::move(out), {x}, [px, s](TensorImpl& o) {
        auto& gx = grad_buffer(*px);
        for (std::size_t u = 0; u < s.outer; ++u) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = u * s.extent * s.inner + i;
                double gsum = 0.0;
                for (std::size_t a = 0; a < s.extent; ++a) gsum += o.grad[base + a * s.inner];
                for (std::size_t a = 0; a < s.extent; ++a) {
                    const std::size_t at = base + a * s.inner;
                    gx[at] += o.grad[at] - std::exp(o.data[at]) * gsum;
                }
            }
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) fail(ErrorKind::shape, "concat: no inputs");
    const std::size_t ax = normalize_axis(axis, parts.front().rank());
    Shape out_shape = parts.front().shape();
    out_shape[ax] = 0;
    const Shape templ = out_shape;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        Shape probe = p.shape();
        if (probe.size() != out_shape.size()) {
            fail(ErrorKind::shape, "concat: rank mismatch at " + shape_str(probe));
        }
        extents.push_back(probe[ax]);
        probe[ax] = 0;
        if (probe != templ) {
            fail(ErrorKind::shape, "concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                       shape_str(parts.front().shape()));
        }
        out_shape[ax] += extents.back();
    }
    const AxisSplit s = split_at(out_shape, ax);
    std::vector<double> out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto pv = parts[p].values();
        const std::size_t e = extents[p];
        for (std::size_t o = 0; o < s.outer; ++o)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * e * s.inner), e * s.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * s.extent + offset) * s.inner));
        offset += e;
    }
    std::vector<ImplPtr> handles;
    for (const auto& p : parts) handles.push_back(p.handle());
    return make_result(out_shape, std::move(out), parts, [handles, extents, s](TensorImpl& o) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < handles.size(); ++p) {
            const std::size_t e = extents[p];
            if (handles[p]->requires_grad) {
                auto& gp = grad_buffer(*handles[p]);
                for (std::size_t u = 0; u < s.outer; ++u)
                    for (std::size_t j = 0; j < e * s.inner; ++j)
                        gp[u * e * s.inner + j] += o.grad[(u * s.extent + offset) * s.inner + j];
            }
            offset += e;
        }
    });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
    const std::size_t ax = normalize_axis(axis, x.rank());
    const AxisSplit s = split_at(x.shape(), ax);
    if (length == 0 || start + length > s.extent) {
        fail(ErrorKind::shape, "slice [" + std::to_string(start) + ", " +
                                   std::to_string(start + length) + ") out of range for " +
                                   shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[ax] = length;
    std::vector<double> out(s.outer * length * s.inner);
    const auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * s.extent + start) * s.inner),
                    length * s.inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
    ImplPtr px = x.handle();
    return make_result(out_shape, std::move(out), {x}, [px, s, start, length](TensorImpl& o) {
        auto& gx = grad_buffer(*px);
        for (std::size_t u = 0; u < s.outer; ++u)
            for (std::size_t j = 0; j < length * s.inner; ++j)
                gx[(u * s.extent + start) * s.inner + j] += o.grad[u * length * s.inner + j];
    });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
    if (table.rank() != 2) fail(ErrorKind::shape, "gather_rows: table must be 2-D");
    if (ids.empty()) fail(ErrorKind::shape, "gather_rows: empty id sequence");
    const std::size_t rows = table.dim(0);
    const std::size_t d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    const auto tv = table.values();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= rows) {
            fail(ErrorKind::shape, "gather_rows: id " + std::to_string(ids[i]) +
                                       " out of range for " + std::to_string(rows) + " rows");
        }
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    ImplPtr pt = table.handle();
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return make_result({ids.size(), d}, std::move(out), {table}, [pt, idx, d](TensorImpl& o) {
        auto& gt = grad_buffer(*pt);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += o.grad[i * d + j];
    });
}

Tensor gather_positions(const Tensor& x, std::span<const std::size_t> positions) {
    if (x.rank() < 3) fail(ErrorKind::shape, "gather_positions: need rank >= 3");
    const std::size_t groups = x.dim(-3);
    const std::size_t tokens = x.dim(-2);
    const std::size_t d = x.dim(-1);
    if (positions.size() != groups) {
        fail(ErrorKind::shape, "gather_positions: " + std::to_string(positions.size()) +
                                   " positions for " + std::to_string(groups) + " groups");
    }
    for (auto p : positions) {
        if (p >= tokens) fail(ErrorKind::shape, "gather_positions: position out of range");
    }
    const std::size_t batches = x.numel() / (groups * tokens * d);
    Shape out_shape(x.shape().begin(), x.shape().end() - 2);
    out_shape.push_back(d);
    std::vector<double> out(batches * groups * d);
    const auto xv = x.values();
    for (std::size_t b = 0; b < batches; ++b)
        for (std::size_t c = 0; c < groups; ++c)
            std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(((b * groups + c) * tokens + positions[c]) * d),
                        d, out.begin() + static_cast<std::ptrdiff_t>((b * groups + c) * d));
    ImplPtr px = x.handle();
    std::vector<std::size_t> pos(positions.begin(), positions.end());
    return make_result(out_shape, std::move(out), {x},
                       [px, pos, batches, groups, tokens, d](TensorImpl& o) {
        auto& gx = grad_buffer(*px);
        for (std::size_t b = 0; b < batches; ++b)
            for (std::size_t c = 0; c < groups; ++c)
                for (std::size_t j = 0; j < d; ++j)
                    gx[((b * groups + c) * tokens + pos[c]) * d + j] += o.grad[(b * groups + c) * d + j];
    });
}

Tensor inner(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        fail(ErrorKind::shape, "inner: shape mismatch " + shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
    }
    return sum(mul(a, b));
}

Tensor norm_sq(const Tensor& a) { return sum(mul(a, a)); }

}  // namespace nearl
