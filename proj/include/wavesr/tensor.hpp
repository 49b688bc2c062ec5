#pragma once

// Dense tensor engine with reverse-mode differentiation, multiply-add
// instrumentation, and deterministic seeded initialization.
//
// Semantics:
//  - Scalars are 64-bit doubles, stored row-major.
//  - Every op validates shapes and rejects non-finite outputs.
//  - A backward graph (tape) is recorded per forward pass while grad mode
//    is on; Tensor::backward() consumes and frees the tape, so a second
//    backward on the same graph is an error.
//  - Leaf gradients accumulate across tapes; call zero_grad between steps.
//
// Mult-add counting convention (OpCounter):
//  - matmul [m x k]*[k x n]          -> m*k*n
//  - linear [n x in] -> [n x out]    -> n*in*out
//  - conv2d                          -> C_out*C_in*k^2*H_out*W_out
//  - depthwise_conv2d                -> C*k^2*H_out*W_out
//  - every other op (elementwise maps, norms, reductions, layout moves,
//    softmax) counts zero; bias additions count zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace wavesr {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += "x";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

namespace detail {

[[noreturn]] inline void fail(const std::string& op, const std::string& msg) {
    throw std::invalid_argument(op + ": " + msg);
}

inline void require(bool cond, const std::string& op, const std::string& msg) {
    if (!cond) fail(op, msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Instrumentation: global mult-add counter plus a per-op-name call trace.
// Single-threaded by contract; reset between measurements.

class OpCounter {
public:
    static OpCounter& instance() {
        static OpCounter c;
        return c;
    }

    void reset() {
        mult_adds_ = 0;
        trace_.clear();
    }

    void add_mult_adds(std::uint64_t n) {
        if (mult_adds_ > std::numeric_limits<std::uint64_t>::max() - n)
            throw std::overflow_error("OpCounter: mult-add counter overflow");
        mult_adds_ += n;
    }

    std::uint64_t mult_adds() const { return mult_adds_; }

    void record(const char* op) { ++trace_[op]; }

    std::uint64_t op_count(const std::string& op) const {
        auto it = trace_.find(op);
        return it == trace_.end() ? 0 : it->second;
    }

    const std::map<std::string, std::uint64_t>& trace() const { return trace_; }

private:
    std::uint64_t mult_adds_ = 0;
    std::map<std::string, std::uint64_t> trace_;
};

// ---------------------------------------------------------------------------
// Grad mode. NoGradGuard suppresses tape recording in a scope (finite
// difference probes, inference).

inline bool& grad_mode_ref() {
    static bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_ref(); }

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_ref()) { grad_mode_ref() = false; }
    ~NoGradGuard() { grad_mode_ref() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---------------------------------------------------------------------------
// Deterministic RNG: splitmix64. Identical seed gives an identical scalar
// sequence on every platform (pure 64-bit integer arithmetic).

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased-enough for index use: multiply-shift mapping of a u64 draw.
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(
            (static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
    }

private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Tensor

struct TensorData;

struct GradNode {
    const char* op;
    std::vector<std::shared_ptr<TensorData>> parents;
    // Reads the output's grad buffer, accumulates into parents' grads.
    std::function<void(const TensorData& out)> backward;
};

struct TensorData {
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;  // leaf flag set by the user
    std::vector<double> grad;    // sized lazily on first accumulation
    std::shared_ptr<GradNode> node;
    bool backward_done = false;
};

class Tensor {
public:
    Tensor() : d_(std::make_shared<TensorData>()) {}

    Tensor(Shape shape, std::vector<double> value) : d_(std::make_shared<TensorData>()) {
        if (numel_of(shape) != static_cast<std::int64_t>(value.size()))
            detail::fail("Tensor", "shape " + shape_str(shape) + " does not match " +
                                       std::to_string(value.size()) + " scalars");
        d_->shape = std::move(shape);
        d_->value = std::move(value);
    }

    static Tensor zeros(Shape shape) {
        std::vector<double> v(static_cast<std::size_t>(numel_of(shape)), 0.0);
        return Tensor(std::move(shape), std::move(v));
    }

    static Tensor full(Shape shape, double x) {
        std::vector<double> v(static_cast<std::size_t>(numel_of(shape)), x);
        return Tensor(std::move(shape), std::move(v));
    }

    static Tensor scalar(double x) { return Tensor({1}, {x}); }

    const Shape& shape() const { return d_->shape; }
    std::int64_t ndim() const { return static_cast<std::int64_t>(d_->shape.size()); }
    std::int64_t dim(std::size_t i) const { return d_->shape[i]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(d_->value.size()); }

    double* data() { return d_->value.data(); }
    const double* data() const { return d_->value.data(); }
    std::vector<double>& values() { return d_->value; }
    const std::vector<double>& values() const { return d_->value; }

    double item() const {
        detail::require(numel() == 1, "item", "tensor is not scalar, shape " + shape_str(shape()));
        return d_->value[0];
    }

    bool requires_grad() const { return d_->requires_grad; }

    Tensor& set_requires_grad(bool b) {
        d_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !d_->grad.empty(); }

    const std::vector<double>& grad() const {
        if (d_->grad.empty())
            throw std::runtime_error("grad: no gradient recorded for this tensor");
        return d_->grad;
    }

    void zero_grad() { d_->grad.assign(d_->value.size(), 0.0); }
    void clear_grad() { d_->grad.clear(); }

    // True when an op consuming this tensor must be recorded on the tape.
    bool tracked() const { return d_->requires_grad || d_->node != nullptr; }

    void backward() const;

    const std::shared_ptr<TensorData>& ptr() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

namespace detail {

inline void accumulate(TensorData& t, const double* g, std::size_t n) {
    if (t.grad.empty()) t.grad.assign(t.value.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) t.grad[i] += g[i];
}

inline std::vector<double>& grad_buf(TensorData& t) {
    if (t.grad.empty()) t.grad.assign(t.value.size(), 0.0);
    return t.grad;
}

inline void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x))
            throw std::runtime_error(std::string(op) + " produced a non-finite value");
}

// Wraps op output construction: records the trace entry, rejects non-finite
// results, and attaches the tape node when any input is tracked.
inline Tensor make_op(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(const TensorData&)> backward) {
    OpCounter::instance().record(op);
    check_finite(op, value);
    Tensor out(std::move(shape), std::move(value));
    if (grad_enabled()) {
        bool tracked = false;
        for (const auto& t : inputs) tracked = tracked || t.tracked();
        if (tracked) {
            auto node = std::make_shared<GradNode>();
            node->op = op;
            for (const auto& t : inputs) node->parents.push_back(t.ptr());
            node->backward = std::move(backward);
            out.ptr()->node = std::move(node);
        }
    }
    return out;
}

}  // namespace detail

inline void Tensor::backward() const {
    detail::require(numel() == 1, "backward", "loss must be a scalar, got " + shape_str(shape()));
    if (d_->backward_done)
        throw std::runtime_error("backward: tape already consumed; record a new forward pass");
    if (!d_->node && !d_->requires_grad)
        throw std::runtime_error("backward: tensor has no recorded graph");

    // Iterative DFS postorder; reversed it is a topological order, so every
    // tensor has its full output gradient before its own node runs.
    std::vector<TensorData*> topo;
    std::unordered_set<TensorData*> visited;
    std::vector<std::pair<TensorData*, std::size_t>> stack;
    stack.emplace_back(d_.get(), 0);
    visited.insert(d_.get());
    while (!stack.empty()) {
        auto& [cur, idx] = stack.back();
        GradNode* gn = cur->node.get();
        std::size_t nparents = gn ? gn->parents.size() : 0;
        if (idx < nparents) {
            TensorData* p = gn->parents[idx++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(cur);
            stack.pop_back();
        }
    }

    d_->grad.assign(1, 1.0);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorData* t = *it;
        if (t->node && !t->grad.empty()) t->node->backward(*t);
    }
    for (TensorData* t : topo) t->node.reset();
    d_->backward_done = true;
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), op,
                    "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> v(a.values());
    for (std::int64_t i = 0; i < a.numel(); ++i) v[i] += b.data()[i];
    return detail::make_op("add", a.shape(), std::move(v), {a, b}, [a, b](const TensorData& out) {
        detail::accumulate(*a.ptr(), out.grad.data(), out.grad.size());
        detail::accumulate(*b.ptr(), out.grad.data(), out.grad.size());
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> v(a.values());
    for (std::int64_t i = 0; i < a.numel(); ++i) v[i] -= b.data()[i];
    return detail::make_op("sub", a.shape(), std::move(v), {a, b}, [a, b](const TensorData& out) {
        detail::accumulate(*a.ptr(), out.grad.data(), out.grad.size());
        auto& g = detail::grad_buf(*b.ptr());
        for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] -= out.grad[i];
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> v(a.values());
    for (std::int64_t i = 0; i < a.numel(); ++i) v[i] *= b.data()[i];
    return detail::make_op("mul", a.shape(), std::move(v), {a, b}, [a, b](const TensorData& out) {
        auto& ga = detail::grad_buf(*a.ptr());
        auto& gb = detail::grad_buf(*b.ptr());
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            ga[i] += out.grad[i] * b.data()[i];
            gb[i] += out.grad[i] * a.data()[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> v(a.values());
    for (auto& x : v) x *= s;
    return detail::make_op("scale", a.shape(), std::move(v), {a}, [a, s](const TensorData& out) {
        auto& g = detail::grad_buf(*a.ptr());
        for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] * s;
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    detail::require(numel_of(shape) == a.numel(), "reshape",
                    "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<double> v(a.values());
    return detail::make_op("reshape", std::move(shape), std::move(v), {a},
                           [a](const TensorData& out) {
                               detail::accumulate(*a.ptr(), out.grad.data(), out.grad.size());
                           });
}

inline Tensor transpose2d(const Tensor& a) {
    detail::require(a.ndim() == 2, "transpose2d", "expects rank 2, got " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> v(static_cast<std::size_t>(m * n));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) v[j * m + i] = a.data()[i * n + j];
    return detail::make_op("transpose2d", {n, m}, std::move(v), {a},
                           [a, m, n](const TensorData& out) {
                               auto& g = detail::grad_buf(*a.ptr());
                               for (std::int64_t i = 0; i < m; ++i)
                                   for (std::int64_t j = 0; j < n; ++j)
                                       g[i * n + j] += out.grad[j * m + i];
                           });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    detail::require(!parts.empty(), "concat", "no inputs");
    const Shape& s0 = parts[0].shape();
    detail::require(axis < s0.size(), "concat", "axis out of range");
    Shape out_shape = s0;
    std::int64_t total_axis = 0;
    for (const auto& p : parts) {
        detail::require(p.shape().size() == s0.size(), "concat", "rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != axis)
                detail::require(p.shape()[d] == s0[d], "concat",
                                "extent mismatch on axis " + std::to_string(d));
        total_axis += p.shape()[axis];
    }
    out_shape[axis] = total_axis;

    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    std::vector<double> v(static_cast<std::size_t>(numel_of(out_shape)));
    std::int64_t offset = 0;  // running start along the concat axis
    for (const auto& p : parts) {
        const std::int64_t len = p.shape()[axis];
        for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = p.data() + o * len * inner;
            double* dst = v.data() + (o * total_axis + offset) * inner;
            std::copy(src, src + len * inner, dst);
        }
        offset += len;
    }

    return detail::make_op(
        "concat", std::move(out_shape), std::move(v), parts,
        [parts, axis, outer, inner, total_axis](const TensorData& out) {
            std::int64_t offset = 0;
            for (const auto& p : parts) {
                const std::int64_t len = p.shape()[axis];
                auto& g = detail::grad_buf(*p.ptr());
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = out.grad.data() + (o * total_axis + offset) * inner;
                    double* dst = g.data() + o * len * inner;
                    for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                }
                offset += len;
            }
        });
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::int64_t start, std::int64_t len) {
    const Shape& s = a.shape();
    detail::require(axis < s.size(), "slice", "axis out of range");
    detail::require(start >= 0 && len > 0 && start + len <= s[axis], "slice",
                    "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                        ") outside extent " + std::to_string(s[axis]));
    Shape out_shape = s;
    out_shape[axis] = len;
    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::int64_t dim = s[axis];

    std::vector<double> v(static_cast<std::size_t>(outer * len * inner));
    for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = a.data() + (o * dim + start) * inner;
        std::copy(src, src + len * inner, v.data() + o * len * inner);
    }
    return detail::make_op("slice", std::move(out_shape), std::move(v), {a},
                           [a, outer, inner, dim, start, len](const TensorData& out) {
                               auto& g = detail::grad_buf(*a.ptr());
                               for (std::int64_t o = 0; o < outer; ++o) {
                                   const double* src = out.grad.data() + o * len * inner;
                                   double* dst = g.data() + (o * dim + start) * inner;
                                   for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                               }
                           });
}

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    return detail::make_op("sum", {1}, {acc}, {a}, [a](const TensorData& out) {
        auto& g = detail::grad_buf(*a.ptr());
        for (auto& x : g) x += out.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    detail::require(a.numel() > 0, "mean", "empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// |x| with subgradient sign(x), sign(0) = 0.
inline Tensor abs(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x = std::abs(x);
    return detail::make_op("abs", a.shape(), std::move(v), {a}, [a](const TensorData& out) {
        auto& g = detail::grad_buf(*a.ptr());
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            double x = a.data()[i];
            g[i] += out.grad[i] * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
        }
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x = x > 0 ? x : 0.0;
    return detail::make_op("relu", a.shape(), std::move(v), {a}, [a](const TensorData& out) {
        auto& g = detail::grad_buf(*a.ptr());
        for (std::size_t i = 0; i < out.grad.size(); ++i)
            g[i] += a.data()[i] > 0 ? out.grad[i] : 0.0;
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x = 1.0 / (1.0 + std::exp(-x));
    return detail::make_op("sigmoid", a.shape(), std::move(v), {a}, [a](const TensorData& out) {
        auto& g = detail::grad_buf(*a.ptr());
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            double y = out.value[i];
            g[i] += out.grad[i] * y * (1.0 - y);
        }
    });
}

// Gaussian error linear unit, tanh form:
//   gelu(x) = 0.5 x (1 + tanh(c0 (x + c1 x^3))),  c0 = sqrt(2/pi), c1 = 0.044715
inline constexpr double kGeluC0 = 0.7978845608028654;
inline constexpr double kGeluC1 = 0.044715;

inline Tensor gelu(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) {
        double t = std::tanh(kGeluC0 * (x + kGeluC1 * x * x * x));
        x = 0.5 * x * (1.0 + t);
    }
    return detail::make_op("gelu", a.shape(), std::move(v), {a}, [a](const TensorData& out) {
        auto& g = detail::grad_buf(*a.ptr());
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            double x = a.data()[i];
            double u = kGeluC0 * (x + kGeluC1 * x * x * x);
            double t = std::tanh(u);
            double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
            g[i] += out.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
        }
    });
}

// exp and row softmax exist only for the dense-attention cost baseline; the
// production attention path never calls them, which the op trace verifies.
inline Tensor exp(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x = std::exp(x);
    return detail::make_op("exp", a.shape(), std::move(v), {a}, [a](const TensorData& out) {
        auto& g = detail::grad_buf(*a.ptr());
        for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] * out.value[i];
    });
}

inline Tensor softmax_rows(const Tensor& a) {
    detail::require(a.ndim() == 2, "softmax", "expects rank 2, got " + shape_str(a.shape()));
    OpCounter::instance().record("exp");
    const std::int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> v(a.values());
    for (std::int64_t i = 0; i < m; ++i) {
        double* row = v.data() + i * n;
        double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (std::int64_t j = 0; j < n; ++j) row[j] /= z;
    }
    return detail::make_op("softmax", a.shape(), std::move(v), {a},
                           [a, m, n](const TensorData& out) {
                               auto& g = detail::grad_buf(*a.ptr());
                               for (std::int64_t i = 0; i < m; ++i) {
                                   const double* y = out.value.data() + i * n;
                                   const double* dy = out.grad.data() + i * n;
                                   double dot = 0.0;
                                   for (std::int64_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                                   for (std::int64_t j = 0; j < n; ++j)
                                       g[i * n + j] += (dy[j] - dot) * y[j];
                               }
                           });
}

// Clamp to [0,1]; pass-through gradient inside the interval. Inference only.
inline Tensor clamp01(const Tensor& a) {
    std::vector<double> v(a.values());
    for (auto& x : v) x = std::min(1.0, std::max(0.0, x));
    return detail::make_op("clamp01", a.shape(), std::move(v), {a}, [a](const TensorData& out) {
        auto& g = detail::grad_buf(*a.ptr());
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            double x = a.data()[i];
            if (x > 0.0 && x < 1.0) g[i] += out.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require(a.ndim() == 2 && b.ndim() == 2, "matmul",
                    "expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                        shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    detail::require(k == k2, "matmul",
                    "inner extents differ: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
    OpCounter::instance().add_mult_adds(static_cast<std::uint64_t>(m) * k * n);

    std::vector<double> v(static_cast<std::size_t>(m * n), 0.0);
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
            const double aik = pa[i * k + p];
            const double* brow = pb + p * n;
            double* crow = v.data() + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }

    return detail::make_op("matmul", {m, n}, std::move(v), {a, b},
                           [a, b, m, k, n](const TensorData& out) {
                               // dA = dC * B^T ; dB = A^T * dC
                               auto& ga = detail::grad_buf(*a.ptr());
                               auto& gb = detail::grad_buf(*b.ptr());
                               const double* dc = out.grad.data();
                               const double* pa = a.data();
                               const double* pb = b.data();
                               for (std::int64_t i = 0; i < m; ++i)
                                   for (std::int64_t j = 0; j < n; ++j) {
                                       const double d = dc[i * n + j];
                                       if (d == 0.0) continue;
                                       const double* brow = pb + j;
                                       for (std::int64_t p = 0; p < k; ++p)
                                           ga[i * k + p] += d * brow[p * n];
                                   }
                               for (std::int64_t p = 0; p < k; ++p)
                                   for (std::int64_t i = 0; i < m; ++i) {
                                       const double av = pa[i * k + p];
                                       if (av == 0.0) continue;
                                       const double* drow = dc + i * n;
                                       double* grow = gb.data() + p * n;
                                       for (std::int64_t j = 0; j < n; ++j) grow[j] += av * drow[j];
                                   }
                           });
}

// y = x * w^T + b for token matrices: x [n x in], w [out x in], b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    detail::require(x.ndim() == 2 && w.ndim() == 2, "linear",
                    "expects rank-2 input and weight");
    const std::int64_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
    detail::require(w.dim(1) == in, "linear",
                    "weight " + shape_str(w.shape()) + " does not accept input " +
                        shape_str(x.shape()));
    detail::require(b.ndim() == 1 && b.dim(0) == out, "linear",
                    "bias " + shape_str(b.shape()) + " does not match " +
                        std::to_string(out) + " outputs");
    OpCounter::instance().add_mult_adds(static_cast<std::uint64_t>(n) * in * out);

    std::vector<double> v(static_cast<std::size_t>(n * out));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t o = 0; o < out; ++o) {
            double acc = b.data()[o];
            const double* xr = x.data() + i * in;
            const double* wr = w.data() + o * in;
            for (std::int64_t p = 0; p < in; ++p) acc += xr[p] * wr[p];
            v[i * out + o] = acc;
        }

    return detail::make_op("linear", {n, out}, std::move(v), {x, w, b},
                           [x, w, b, n, in, out](const TensorData& o_) {
                               auto& gx = detail::grad_buf(*x.ptr());
                               auto& gw = detail::grad_buf(*w.ptr());
                               auto& gb = detail::grad_buf(*b.ptr());
                               const double* dy = o_.grad.data();
                               for (std::int64_t i = 0; i < n; ++i)
                                   for (std::int64_t o = 0; o < out; ++o) {
                                       const double d = dy[i * out + o];
                                       if (d == 0.0) continue;
                                       gb[o] += d;
                                       const double* wr = w.data() + o * in;
                                       const double* xr = x.data() + i * in;
                                       double* gxr = gx.data() + i * in;
                                       double* gwr = gw.data() + o * in;
                                       for (std::int64_t p = 0; p < in; ++p) {
                                           gxr[p] += d * wr[p];
                                           gwr[p] += d * xr[p];
                                       }
                                   }
                           });
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation, zero padding)

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t pad) {
    detail::require(x.ndim() == 3, "conv2d", "input must be [C x H x W]");
    detail::require(w.ndim() == 4, "conv2d", "weight must be [C_out x C_in x k x k]");
    const std::int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::int64_t cout = w.dim(0), k = w.dim(2);
    detail::require(w.dim(1) == cin, "conv2d",
                    "weight expects " + std::to_string(w.dim(1)) + " input channels, image has " +
                        std::to_string(cin));
    detail::require(w.dim(3) == k && k % 2 == 1, "conv2d", "kernel must be square with odd size");
    detail::require(b.ndim() == 1 && b.dim(0) == cout, "conv2d", "bias must be [C_out]");
    detail::require(pad >= 0, "conv2d", "negative padding");
    const std::int64_t ho = h + 2 * pad - k + 1, wo = wd + 2 * pad - k + 1;
    detail::require(ho > 0 && wo > 0, "conv2d", "kernel larger than padded input");
    OpCounter::instance().add_mult_adds(static_cast<std::uint64_t>(cout) * cin * k * k * ho * wo);

    std::vector<double> v(static_cast<std::size_t>(cout * ho * wo));
    for (std::int64_t co = 0; co < cout; ++co)
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                double acc = b.data()[co];
                for (std::int64_t ci = 0; ci < cin; ++ci)
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        const std::int64_t iy = oy + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const double* xr = x.data() + (ci * h + iy) * wd;
                        const double* wr = w.data() + ((co * cin + ci) * k + ky) * k;
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::int64_t ix = ox + kx - pad;
                            if (ix < 0 || ix >= wd) continue;
                            acc += xr[ix] * wr[kx];
                        }
                    }
                v[(co * ho + oy) * wo + ox] = acc;
            }

    return detail::make_op(
        "conv2d", {cout, ho, wo}, std::move(v), {x, w, b},
        [x, w, b, cin, h, wd, cout, k, pad, ho, wo](const TensorData& out) {
            auto& gx = detail::grad_buf(*x.ptr());
            auto& gw = detail::grad_buf(*w.ptr());
            auto& gb = detail::grad_buf(*b.ptr());
            const double* dy = out.grad.data();
            for (std::int64_t co = 0; co < cout; ++co)
                for (std::int64_t oy = 0; oy < ho; ++oy)
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const double d = dy[(co * ho + oy) * wo + ox];
                        if (d == 0.0) continue;
                        gb[co] += d;
                        for (std::int64_t ci = 0; ci < cin; ++ci)
                            for (std::int64_t ky = 0; ky < k; ++ky) {
                                const std::int64_t iy = oy + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                for (std::int64_t kx = 0; kx < k; ++kx) {
                                    const std::int64_t ix = ox + kx - pad;
                                    if (ix < 0 || ix >= wd) continue;
                                    gx[(ci * h + iy) * wd + ix] +=
                                        d * w.data()[((co * cin + ci) * k + ky) * k + kx];
                                    gw[((co * cin + ci) * k + ky) * k + kx] +=
                                        d * x.data()[(ci * h + iy) * wd + ix];
                                }
                            }
                    }
        });
}

// One kernel per channel: x [C x H x W], w [C x k x k], b [C].
inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                               std::int64_t pad) {
    detail::require(x.ndim() == 3, "depthwise_conv2d", "input must be [C x H x W]");
    detail::require(w.ndim() == 3, "depthwise_conv2d", "weight must be [C x k x k]");
    const std::int64_t c = x.dim(0), h = x.dim(1), wd = x.dim(2), k = w.dim(1);
    detail::require(w.dim(0) == c, "depthwise_conv2d",
                    "kernel count " + std::to_string(w.dim(0)) + " != channels " +
                        std::to_string(c));
    detail::require(w.dim(2) == k && k % 2 == 1, "depthwise_conv2d",
                    "kernel must be square with odd size");
    detail::require(b.ndim() == 1 && b.dim(0) == c, "depthwise_conv2d", "bias must be [C]");
    const std::int64_t ho = h + 2 * pad - k + 1, wo = wd + 2 * pad - k + 1;
    detail::require(ho > 0 && wo > 0, "depthwise_conv2d", "kernel larger than padded input");
    OpCounter::instance().add_mult_adds(static_cast<std::uint64_t>(c) * k * k * ho * wo);

    std::vector<double> v(static_cast<std::size_t>(c * ho * wo));
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                double acc = b.data()[ci];
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    const std::int64_t iy = oy + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                        const std::int64_t ix = ox + kx - pad;
                        if (ix < 0 || ix >= wd) continue;
                        acc += x.data()[(ci * h + iy) * wd + ix] *
                               w.data()[(ci * k + ky) * k + kx];
                    }
                }
                v[(ci * ho + oy) * wo + ox] = acc;
            }

    return detail::make_op(
        "depthwise_conv2d", {c, ho, wo}, std::move(v), {x, w, b},
        [x, w, b, c, h, wd, k, pad, ho, wo](const TensorData& out) {
            auto& gx = detail::grad_buf(*x.ptr());
            auto& gw = detail::grad_buf(*w.ptr());
            auto& gb = detail::grad_buf(*b.ptr());
            const double* dy = out.grad.data();
            for (std::int64_t ci = 0; ci < c; ++ci)
                for (std::int64_t oy = 0; oy < ho; ++oy)
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const double d = dy[(ci * ho + oy) * wo + ox];
                        if (d == 0.0) continue;
                        gb[ci] += d;
                        for (std::int64_t ky = 0; ky < k; ++ky) {
                            const std::int64_t iy = oy + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const std::int64_t ix = ox + kx - pad;
                                if (ix < 0 || ix >= wd) continue;
                                gx[(ci * h + iy) * wd + ix] += d * w.data()[(ci * k + ky) * k + kx];
                                gw[(ci * k + ky) * k + kx] += d * x.data()[(ci * h + iy) * wd + ix];
                            }
                        }
                    }
        });
}

// ---------------------------------------------------------------------------
// Normalization over the last axis, then affine.

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    detail::require(x.ndim() >= 1, "layer_norm", "input must have at least one axis");
    const std::int64_t c = x.shape().back();
    detail::require(gamma.ndim() == 1 && gamma.dim(0) == c, "layer_norm",
                    "gamma " + shape_str(gamma.shape()) + " does not match channels " +
                        std::to_string(c));
    detail::require(beta.ndim() == 1 && beta.dim(0) == c, "layer_norm",
                    "beta " + shape_str(beta.shape()) + " does not match channels " +
                        std::to_string(c));
    detail::require(eps > 0, "layer_norm", "eps must be positive");
    const std::int64_t rows = x.numel() / c;

    std::vector<double> v(static_cast<std::size_t>(x.numel()));
    std::vector<double> xhat(v.size());   // saved for backward
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * c;
        double mu = 0.0;
        for (std::int64_t j = 0; j < c; ++j) mu += xr[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::int64_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::int64_t j = 0; j < c; ++j) {
            const double xh = (xr[j] - mu) * is;
            xhat[r * c + j] = xh;
            v[r * c + j] = gamma.data()[j] * xh + beta.data()[j];
        }
    }

    return detail::make_op(
        "layer_norm", x.shape(), std::move(v), {x, gamma, beta},
        [x, gamma, beta, rows, c, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](const TensorData& out) {
            auto& gx = detail::grad_buf(*x.ptr());
            auto& gg = detail::grad_buf(*gamma.ptr());
            auto& gb = detail::grad_buf(*beta.ptr());
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* dy = out.grad.data() + r * c;
                const double* xh = xhat.data() + r * c;
                double mean_g = 0.0, mean_gx = 0.0;
                for (std::int64_t j = 0; j < c; ++j) {
                    const double gj = dy[j] * gamma.data()[j];
                    mean_g += gj;
                    mean_gx += gj * xh[j];
                    gg[j] += dy[j] * xh[j];
                    gb[j] += dy[j];
                }
                mean_g /= static_cast<double>(c);
                mean_gx /= static_cast<double>(c);
                for (std::int64_t j = 0; j < c; ++j) {
                    const double gj = dy[j] * gamma.data()[j];
                    gx[r * c + j] += inv_std[r] * (gj - mean_g - xh[j] * mean_gx);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Pixel shuffle: [C*s^2 x H x W] -> [C x sH x sW], row-major group order,
// i.e. out[c][y*s+dy][x*s+dx] = in[c*s^2 + dy*s + dx][y][x].

inline Tensor pixel_shuffle(const Tensor& x, std::int64_t s) {
    detail::require(x.ndim() == 3, "pixel_shuffle", "input must be [C x H x W]");
    detail::require(s >= 1, "pixel_shuffle", "scale must be >= 1");
    const std::int64_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    detail::require(cin % (s * s) == 0, "pixel_shuffle",
                    std::to_string(cin) + " channels not divisible by s^2 = " +
                        std::to_string(s * s));
    const std::int64_t c = cin / (s * s);

    std::vector<double> v(static_cast<std::size_t>(x.numel()));
    for (std::int64_t co = 0; co < c; ++co)
        for (std::int64_t dy = 0; dy < s; ++dy)
            for (std::int64_t dx = 0; dx < s; ++dx) {
                const std::int64_t ci = co * s * s + dy * s + dx;
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t xx = 0; xx < w; ++xx)
                        v[(co * h * s + y * s + dy) * w * s + xx * s + dx] =
                            x.data()[(ci * h + y) * w + xx];
            }

    return detail::make_op("pixel_shuffle", {c, h * s, w * s}, std::move(v), {x},
                           [x, c, h, w, s](const TensorData& out) {
                               auto& g = detail::grad_buf(*x.ptr());
                               for (std::int64_t co = 0; co < c; ++co)
                                   for (std::int64_t dy = 0; dy < s; ++dy)
                                       for (std::int64_t dx = 0; dx < s; ++dx) {
                                           const std::int64_t ci = co * s * s + dy * s + dx;
                                           for (std::int64_t y = 0; y < h; ++y)
                                               for (std::int64_t xx = 0; xx < w; ++xx)
                                                   g[(ci * h + y) * w + xx] +=
                                                       out.grad[(co * h * s + y * s + dy) * w * s +
                                                                xx * s + dx];
                                       }
                           });
}

// ---------------------------------------------------------------------------
// Layout moves between planar [C x H x W] maps and token matrices [HW x C].

inline Tensor to_tokens(const Tensor& x) {
    detail::require(x.ndim() == 3, "to_tokens", "input must be [C x H x W]");
    const std::int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<double> v(static_cast<std::size_t>(x.numel()));
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t p = 0; p < hw; ++p) v[p * c + ci] = x.data()[ci * hw + p];
    return detail::make_op("to_tokens", {hw, c}, std::move(v), {x},
                           [x, c, hw](const TensorData& out) {
                               auto& g = detail::grad_buf(*x.ptr());
                               for (std::int64_t ci = 0; ci < c; ++ci)
                                   for (std::int64_t p = 0; p < hw; ++p)
                                       g[ci * hw + p] += out.grad[p * c + ci];
                           });
}

inline Tensor to_planar(const Tensor& t, std::int64_t h, std::int64_t w) {
    detail::require(t.ndim() == 2, "to_planar", "input must be [HW x C]");
    const std::int64_t hw = t.dim(0), c = t.dim(1);
    detail::require(hw == h * w, "to_planar",
                    std::to_string(hw) + " tokens cannot form a " + std::to_string(h) + "x" +
                        std::to_string(w) + " map");
    std::vector<double> v(static_cast<std::size_t>(t.numel()));
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t p = 0; p < hw; ++p) v[ci * hw + p] = t.data()[p * c + ci];
    return detail::make_op("to_planar", {c, h, w}, std::move(v), {t},
                           [t, c, hw](const TensorData& out) {
                               auto& g = detail::grad_buf(*t.ptr());
                               for (std::int64_t ci = 0; ci < c; ++ci)
                                   for (std::int64_t p = 0; p < hw; ++p)
                                       g[p * c + ci] += out.grad[ci * hw + p];
                           });
}

// Per-channel spatial mean: [C x H x W] -> [C].
inline Tensor channel_mean(const Tensor& x) {
    detail::require(x.ndim() == 3, "channel_mean", "input must be [C x H x W]");
    const std::int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<double> v(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (std::int64_t p = 0; p < hw; ++p) acc += x.data()[ci * hw + p];
        v[ci] = acc / static_cast<double>(hw);
    }
    return detail::make_op("channel_mean", {c}, std::move(v), {x},
                           [x, c, hw](const TensorData& out) {
                               auto& g = detail::grad_buf(*x.ptr());
                               for (std::int64_t ci = 0; ci < c; ++ci) {
                                   const double d = out.grad[ci] / static_cast<double>(hw);
                                   for (std::int64_t p = 0; p < hw; ++p) g[ci * hw + p] += d;
                               }
                           });
}

// Per-channel scaling: y[c,·] = x[c,·] * s[c].
inline Tensor channel_scale(const Tensor& x, const Tensor& s) {
    detail::require(x.ndim() == 3, "channel_scale", "input must be [C x H x W]");
    const std::int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    detail::require(s.ndim() == 1 && s.dim(0) == c, "channel_scale", "scale must be [C]");
    std::vector<double> v(x.values());
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t p = 0; p < hw; ++p) v[ci * hw + p] *= s.data()[ci];
    return detail::make_op("channel_scale", x.shape(), std::move(v), {x, s},
                           [x, s, c, hw](const TensorData& out) {
                               auto& gx = detail::grad_buf(*x.ptr());
                               auto& gs = detail::grad_buf(*s.ptr());
                               for (std::int64_t ci = 0; ci < c; ++ci) {
                                   double acc = 0.0;
                                   for (std::int64_t p = 0; p < hw; ++p) {
                                       gx[ci * hw + p] += out.grad[ci * hw + p] * s.data()[ci];
                                       acc += out.grad[ci * hw + p] * x.data()[ci * hw + p];
                                   }
                                   gs[ci] += acc;
                               }
                           });
}

// ---------------------------------------------------------------------------
// Seeded initialization. Weights are centered uniform scaled by 1/sqrt(fan_in)
// and snapped to 32-bit representable values so checkpoint serialization is
// lossless on freshly initialized parameters.

inline Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

inline Tensor init_weight(Shape shape, std::int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = static_cast<double>(static_cast<float>(rng.uniform(-bound, bound)));
    return Tensor(std::move(shape), std::move(v));
}

// ---------------------------------------------------------------------------
// Finite-difference validation. Central differences against the recorded
// backward pass; relative error uses denominator max(|a|,|b|,1e-8).

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h = 1e-5) {
    Tensor xg(x.shape(), x.values());
    xg.set_requires_grad(true);
    Tensor y = f(xg);
    detail::require(y.numel() == 1, "grad_check", "f must return a scalar");
    if (!std::isfinite(y.item())) throw std::runtime_error("grad_check: f(x) is not finite");
    y.backward();
    const std::vector<double> analytic = xg.grad();

    Tensor probe(x.shape(), x.values());
    double worst = 0.0;
    NoGradGuard ng;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + h;
        const double fp = f(probe).item();
        probe.data()[i] = orig - h;
        const double fm = f(probe).item();
        probe.data()[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, rel_err(fd, analytic[static_cast<std::size_t>(i)]));
    }
    return worst;
}

// Same check for a function of several named parameter tensors; the loss
// closure must re-read parameter values on every call.
inline double grad_check_params(const std::function<Tensor()>& loss,
                                const std::vector<Tensor>& params, double h = 1e-5) {
    for (auto p : params) {
        Tensor t = p;
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor y = loss();
    if (!std::isfinite(y.item())) throw std::runtime_error("grad_check_params: loss not finite");
    y.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    NoGradGuard ng;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double orig = p.data()[i];
            p.data()[i] = orig + h;
            const double fp = loss().item();
            p.data()[i] = orig - h;
            const double fm = loss().item();
            p.data()[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, rel_err(fd, analytic[pi][static_cast<std::size_t>(i)]));
        }
    }
    return worst;
}

}  // namespace wavesr
