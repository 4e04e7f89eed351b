#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "emgttl/common.hpp"

#ifdef EMGTTL_USE_CBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace emgttl::ad {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
class Tape;

// Dense row-major tensor. `data` is shared so that checkpoint copies and
// tape-bound views are cheap; mutation through one view is visible to all.
template <typename T>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<T>> data;
    Tape<T>* tape = nullptr;
    int node = -1;

    Tensor() : data(std::make_shared<std::vector<T>>()) {}

    static Tensor zeros(Shape s) {
        Tensor t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<T>>(numel(t.shape), T(0));
        return t;
    }
    static Tensor full(Shape s, T v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.data->begin(), t.data->end(), v);
        return t;
    }
    static Tensor from(Shape s, std::vector<T> values) {
        if (numel(s) != values.size())
            throw ShapeError("Tensor::from: " + shape_str(s) + " does not hold " +
                             std::to_string(values.size()) + " values");
        Tensor t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<T>>(std::move(values));
        return t;
    }
    static Tensor scalar(T v) { return from({1}, {v}); }

    size_t size() const { return data->size(); }
    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T item() const {
        if (size() != 1) throw UsageError("Tensor::item: tensor is not scalar");
        return (*data)[0];
    }
    bool tracked() const { return tape != nullptr && node >= 0; }

    // Deep copy that drops any tape attachment.
    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<T>>(*data);
        return t;
    }
};

// Reverse-mode tape. Recording order is topological order; backward() runs
// the nodes in reverse, accumulating (+=) into parent gradients. One tape
// per forward pass, owned by a single execution context.
template <typename T>
class Tape {
public:
    // Watch a value (parameter or input); returns a tracked view sharing data.
    Tensor<T> leaf(const Tensor<T>& value) {
        Tensor<T> out = value;
        out.tape = this;
        out.node = alloc(value.size());
        return out;
    }

    int alloc(size_t grad_size) {
        nodes_.push_back(Node{std::vector<T>(grad_size, T(0)), nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    void set_backward(int id, std::function<void(Tape&)> fn) {
        nodes_[static_cast<size_t>(id)].backward = std::move(fn);
    }

    std::vector<T>& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }

    // Reverse sweep from a scalar loss recorded on this tape.
    void backward(const Tensor<T>& loss) {
        if (!loss.tracked() || loss.tape != this)
            throw UsageError("backward: loss is not recorded on this tape");
        if (loss.size() != 1) throw UsageError("backward: loss must be scalar");
        grad(loss.node)[0] = T(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].backward) nodes_[i].backward(*this);
        }
    }

    size_t num_nodes() const { return nodes_.size(); }
    void reset() { nodes_.clear(); }

private:
    struct Node {
        std::vector<T> grad;
        std::function<void(Tape&)> backward;
    };
    std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
Tape<T>* result_tape(const Tensor<T>& a) {
    return a.tracked() ? a.tape : nullptr;
}

template <typename T>
Tape<T>* result_tape(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.tracked() && b.tracked() && a.tape != b.tape)
        throw UsageError("operands recorded on different tapes");
    return a.tracked() ? a.tape : (b.tracked() ? b.tape : nullptr);
}

template <typename T>
Tape<T>* result_tape(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
    Tape<T>* t1 = result_tape(a, b);
    if (t1 && c.tracked() && c.tape != t1)
        throw UsageError("operands recorded on different tapes");
    return t1 ? t1 : (c.tracked() ? c.tape : nullptr);
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
#ifndef NDEBUG
    for (const T& v : *t.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw DataError(std::string(op) + ": non-finite value produced");
#else
    (void)t;
    (void)op;
#endif
}

// C[m x n] (+)= A[m x k] * B[k x n], row-major, optional transposes.
inline void gemm(bool ta, bool tb, size_t m, size_t n, size_t k, const float* a, const float* b,
                 float* c, float beta) {
#ifdef EMGTTL_USE_CBLAS
    static const bool init = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)init;
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
#else
    if (beta == 0.0f)
        for (size_t i = 0; i < m * n; ++i) c[i] = 0.0f;
    for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
            float av = ta ? a[p * m + i] : a[i * k + p];
            const float* brow = tb ? nullptr : b + p * n;
            if (tb) {
                for (size_t j = 0; j < n; ++j) c[i * n + j] += av * b[j * k + p];
            } else {
                for (size_t j = 0; j < n; ++j) c[i * n + j] += av * brow[j];
            }
        }
#endif
}

inline void gemm(bool ta, bool tb, size_t m, size_t n, size_t k, const double* a, const double* b,
                 double* c, double beta) {
#ifdef EMGTTL_USE_CBLAS
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
#else
    if (beta == 0.0)
        for (size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
            double av = ta ? a[p * m + i] : a[i * k + p];
            if (tb) {
                for (size_t j = 0; j < n; ++j) c[i * n + j] += av * b[j * k + p];
            } else {
                const double* brow = b + p * n;
                for (size_t j = 0; j < n; ++j) c[i * n + j] += av * brow[j];
            }
        }
#endif
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// A: [..., m, k]; B: [k, n] (shared weight) or [..., k, n] with identical
// leading dims. Batched over the leading dims.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape.size() < 2 || b.shape.size() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape) +
                         " and " + shape_str(b.shape));
    size_t m = a.shape[a.shape.size() - 2];
    size_t k = a.shape[a.shape.size() - 1];
    size_t kb = b.shape[b.shape.size() - 2];
    size_t n = b.shape[b.shape.size() - 1];
    if (k != kb)
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    bool b_batched = b.shape.size() > 2;
    Shape lead(a.shape.begin(), a.shape.end() - 2);
    if (b_batched && !std::equal(lead.begin(), lead.end(), b.shape.begin(), b.shape.end() - 2))
        throw ShapeError("matmul: batch dimensions disagree: " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    size_t batch = numel(lead);

    Shape out_shape = lead;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));

    const T* ap = a.ptr();
    const T* bp = b.ptr();
    T* cp = out.ptr();
    for (size_t s = 0; s < batch; ++s) {
        detail::gemm(false, false, m, n, k, ap + s * m * k, b_batched ? bp + s * k * n : bp,
                     cp + s * m * n, T(0));
    }
    detail::check_finite(out, "matmul");

    Tape<T>* tp = detail::result_tape(a, b);
    if (tp) {
        int id = tp->alloc(out.size());
        int ia = a.tracked() ? a.node : -1;
        int ib = b.tracked() ? b.node : -1;
        auto adata = a.data;
        auto bdata = b.data;
        tp->set_backward(id, [=](Tape<T>& t) {
            const T* g = t.grad(id).data();
            if (ia >= 0) {
                T* ga = t.grad(ia).data();
                for (size_t s = 0; s < batch; ++s)  // dA += dC * B^T
                    detail::gemm(false, true, m, k, n, g + s * m * n,
                                 b_batched ? bdata->data() + s * k * n : bdata->data(),
                                 ga + s * m * k, T(1));
            }
            if (ib >= 0) {
                T* gb = t.grad(ib).data();
                for (size_t s = 0; s < batch; ++s)  // dB += A^T * dC
                    detail::gemm(true, false, k, n, m, adata->data() + s * m * k, g + s * m * n,
                                 b_batched ? gb + s * k * n : gb, T(1));
            }
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise / broadcast ops
// ---------------------------------------------------------------------------

// b.shape must equal a.shape or be a suffix of it (broadcast over the
// leading batch dims; covers bias and positional-table adds).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    bool suffix = b.shape.size() <= a.shape.size() &&
                  std::equal(b.shape.begin(), b.shape.end(), a.shape.end() - static_cast<long>(b.shape.size()));
    if (!suffix)
        throw ShapeError("add: " + shape_str(b.shape) + " is not broadcastable to " +
                         shape_str(a.shape));
    size_t bn = b.size();
    Tensor<T> out = a.clone();
    T* op = out.ptr();
    const T* bp = b.ptr();
    for (size_t i = 0; i < out.size(); ++i) op[i] += bp[i % bn];
    detail::check_finite(out, "add");

    Tape<T>* tp = detail::result_tape(a, b);
    if (tp) {
        int id = tp->alloc(out.size());
        int ia = a.tracked() ? a.node : -1;
        int ib = b.tracked() ? b.node : -1;
        size_t an = out.size();
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            if (ia >= 0) {
                std::vector<T>& ga = t.grad(ia);
                for (size_t i = 0; i < an; ++i) ga[i] += g[i];
            }
            if (ib >= 0) {
                std::vector<T>& gb = t.grad(ib);
                for (size_t i = 0; i < an; ++i) gb[i % bn] += g[i];
            }
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape != b.shape)
        throw ShapeError("mul: shapes disagree: " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (size_t i = 0; i < out.size(); ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    detail::check_finite(out, "mul");

    Tape<T>* tp = detail::result_tape(a, b);
    if (tp) {
        int id = tp->alloc(out.size());
        int ia = a.tracked() ? a.node : -1;
        int ib = b.tracked() ? b.node : -1;
        auto adata = a.data;
        auto bdata = b.data;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            if (ia >= 0) {
                std::vector<T>& ga = t.grad(ia);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bdata)[i];
            }
            if (ib >= 0) {
                std::vector<T>& gb = t.grad(ib);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*adata)[i];
            }
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (size_t i = 0; i < out.size(); ++i) (*out.data)[i] = (*a.data)[i] * c;
    detail::check_finite(out, "scale");

    if (Tape<T>* tp = detail::result_tape(a)) {
        int id = tp->alloc(out.size());
        int ia = a.node;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            std::vector<T>& ga = t.grad(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / gelu / dropout
// ---------------------------------------------------------------------------

// Softmax along the last axis, computed with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
    if (a.shape.empty()) throw ShapeError("softmax: rank-0 input");
    size_t d = a.shape.back();
    size_t rows = a.size() / d;
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    const T* x = a.ptr();
    T* y = out.ptr();
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        T* yr = y + r * d;
        T mx = xr[0];
        for (size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        T sum = T(0);
        for (size_t j = 0; j < d; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (size_t j = 0; j < d; ++j) yr[j] /= sum;
    }
    detail::check_finite(out, "softmax");

    if (Tape<T>* tp = detail::result_tape(a)) {
        int id = tp->alloc(out.size());
        int ia = a.node;
        auto ydata = out.data;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            std::vector<T>& ga = t.grad(ia);
            const T* yv = ydata->data();
            for (size_t r = 0; r < rows; ++r) {
                T dot = T(0);
                for (size_t j = 0; j < d; ++j) dot += g[r * d + j] * yv[r * d + j];
                for (size_t j = 0; j < d; ++j)
                    ga[r * d + j] += yv[r * d + j] * (g[r * d + j] - dot);
            }
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

// Layer normalization over the last axis, then affine with gain/bias of
// length d.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
    if (a.shape.empty()) throw ShapeError("layer_norm: rank-0 input");
    size_t d = a.shape.back();
    if (gain.shape != Shape{d} || bias.shape != Shape{d})
        throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
    size_t rows = a.size() / d;

    Tensor<T> out = Tensor<T>::zeros(a.shape);
    auto norm = std::make_shared<std::vector<T>>(a.size());   // (x - mu) / s
    auto inv_s = std::make_shared<std::vector<T>>(rows);
    const T* x = a.ptr();
    T* y = out.ptr();
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        T mu = T(0);
        for (size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(d);
        T is = T(1) / std::sqrt(var + eps);
        (*inv_s)[r] = is;
        for (size_t j = 0; j < d; ++j) {
            T xn = (xr[j] - mu) * is;
            (*norm)[r * d + j] = xn;
            y[r * d + j] = xn * (*gain.data)[j] + (*bias.data)[j];
        }
    }
    detail::check_finite(out, "layer_norm");

    Tape<T>* tp = detail::result_tape(a, gain, bias);
    if (tp) {
        int id = tp->alloc(out.size());
        int ia = a.tracked() ? a.node : -1;
        int ig = gain.tracked() ? gain.node : -1;
        int ib = bias.tracked() ? bias.node : -1;
        auto gdata = gain.data;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            for (size_t r = 0; r < rows; ++r) {
                if (ia >= 0) {
                    std::vector<T>& ga = t.grad(ia);
                    T m1 = T(0), m2 = T(0);
                    for (size_t j = 0; j < d; ++j) {
                        T dn = g[r * d + j] * (*gdata)[j];
                        m1 += dn;
                        m2 += dn * (*norm)[r * d + j];
                    }
                    m1 /= static_cast<T>(d);
                    m2 /= static_cast<T>(d);
                    for (size_t j = 0; j < d; ++j) {
                        T dn = g[r * d + j] * (*gdata)[j];
                        ga[r * d + j] += ((dn - m1) - (*norm)[r * d + j] * m2) * (*inv_s)[r];
                    }
                }
                if (ig >= 0) {
                    std::vector<T>& gg = t.grad(ig);
                    for (size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*norm)[r * d + j];
                }
                if (ib >= 0) {
                    std::vector<T>& gb = t.grad(ib);
                    for (size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                }
            }
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

// Exact Gaussian-CDF GELU: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (size_t i = 0; i < out.size(); ++i) {
        double x = static_cast<double>((*a.data)[i]);
        (*out.data)[i] = static_cast<T>(x * 0.5 * std::erfc(-x * inv_sqrt2));
    }
    detail::check_finite(out, "gelu");

    if (Tape<T>* tp = detail::result_tape(a)) {
        int id = tp->alloc(out.size());
        int ia = a.node;
        auto adata = a.data;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            std::vector<T>& ga = t.grad(ia);
            for (size_t i = 0; i < g.size(); ++i) {
                double x = static_cast<double>((*adata)[i]);
                double phi = 0.5 * std::erfc(-x * inv_sqrt2);
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                ga[i] += g[i] * static_cast<T>(phi + x * pdf);
            }
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

// Inverted dropout: zeros with probability p and scales survivors by
// 1/(1-p) during training; identity at inference.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double p, bool training, uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
    if (!training || p == 0.0) {
        Tensor<T> out = a.clone();
        if (Tape<T>* tp = detail::result_tape(a)) {
            int id = tp->alloc(out.size());
            int ia = a.node;
            tp->set_backward(id, [=](Tape<T>& t) {
                const std::vector<T>& g = t.grad(id);
                std::vector<T>& ga = t.grad(ia);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            });
            out.tape = tp;
            out.node = id;
        }
        return out;
    }
    Rng rng(seed);
    auto mask = std::make_shared<std::vector<T>>(a.size());
    T keep = static_cast<T>(1.0 / (1.0 - p));
    for (size_t i = 0; i < a.size(); ++i) (*mask)[i] = (rng.uniform() >= p) ? keep : T(0);

    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (size_t i = 0; i < out.size(); ++i) (*out.data)[i] = (*a.data)[i] * (*mask)[i];

    if (Tape<T>* tp = detail::result_tape(a)) {
        int id = tp->alloc(out.size());
        int ia = a.node;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            std::vector<T>& ga = t.grad(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions / loss
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = T(0);
    for (const T& v : *a.data) s += v;
    Tensor<T> out = Tensor<T>::scalar(s);
    if (Tape<T>* tp = detail::result_tape(a)) {
        int id = tp->alloc(1);
        int ia = a.node;
        tp->set_backward(id, [=](Tape<T>& t) {
            T g = t.grad(id)[0];
            std::vector<T>& ga = t.grad(ia);
            for (T& v : ga) v += g;
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

// Mean over the batch of -log softmax(logits)[label], via a fused
// log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.shape.size() != 2)
        throw ShapeError("cross_entropy: logits must be [batch x classes], got " +
                         shape_str(logits.shape));
    size_t batch = logits.shape[0];
    size_t k = logits.shape[1];
    if (labels.size() != batch)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
    for (int y : labels)
        if (y < 0 || static_cast<size_t>(y) >= k)
            throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(k) + ")");

    auto probs = std::make_shared<std::vector<T>>(logits.size());
    const T* z = logits.ptr();
    double total = 0.0;
    for (size_t i = 0; i < batch; ++i) {
        const T* zi = z + i * k;
        T mx = zi[0];
        for (size_t j = 1; j < k; ++j) mx = std::max(mx, zi[j]);
        double sum = 0.0;
        for (size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(zi[j] - mx));
        double lse = static_cast<double>(mx) + std::log(sum);
        for (size_t j = 0; j < k; ++j)
            (*probs)[i * k + j] = static_cast<T>(std::exp(static_cast<double>(zi[j]) - lse));
        total += lse - static_cast<double>(zi[labels[i]]);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(batch)));

    if (Tape<T>* tp = detail::result_tape(logits)) {
        int id = tp->alloc(1);
        int ia = logits.node;
        auto labs = labels;
        tp->set_backward(id, [=](Tape<T>& t) {
            T g = t.grad(id)[0];
            std::vector<T>& ga = t.grad(ia);
            T inv_b = T(1) / static_cast<T>(batch);
            for (size_t i = 0; i < batch; ++i)
                for (size_t j = 0; j < k; ++j) {
                    T delta = (static_cast<size_t>(labs[i]) == j) ? T(1) : T(0);
                    ga[i * k + j] += g * ((*probs)[i * k + j] - delta) * inv_b;
                }
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape) + " as " +
                         shape_str(new_shape));
    Tensor<T> out;
    out.shape = std::move(new_shape);
    out.data = std::make_shared<std::vector<T>>(*a.data);
    if (Tape<T>* tp = detail::result_tape(a)) {
        int id = tp->alloc(out.size());
        int ia = a.node;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            std::vector<T>& ga = t.grad(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

namespace detail {

inline std::vector<size_t> strides_of(const Shape& s) {
    std::vector<size_t> st(s.size(), 1);
    for (size_t i = s.size() - 1; i-- > 0;) st[i] = st[i + 1] * s[i + 1];
    return st;
}

}  // namespace detail

// Swap two axes (materialized copy).
template <typename T>
Tensor<T> transpose(const Tensor<T>& a, size_t ax0, size_t ax1) {
    size_t rank = a.shape.size();
    if (ax0 >= rank || ax1 >= rank)
        throw ShapeError("transpose: axis out of range for " + shape_str(a.shape));
    Shape out_shape = a.shape;
    std::swap(out_shape[ax0], out_shape[ax1]);

    std::vector<size_t> in_strides = detail::strides_of(a.shape);
    std::vector<size_t> perm_strides = in_strides;
    std::swap(perm_strides[ax0], perm_strides[ax1]);
    std::vector<size_t> out_strides = detail::strides_of(out_shape);

    Tensor<T> out = Tensor<T>::zeros(out_shape);
    size_t n = out.size();
    const T* src = a.ptr();
    T* dst = out.ptr();
    for (size_t i = 0; i < n; ++i) {
        size_t rem = i, off = 0;
        for (size_t dmn = 0; dmn < rank; ++dmn) {
            size_t idx = rem / out_strides[dmn];
            rem %= out_strides[dmn];
            off += idx * perm_strides[dmn];
        }
        dst[i] = src[off];
    }

    if (Tape<T>* tp = detail::result_tape(a)) {
        int id = tp->alloc(out.size());
        int ia = a.node;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            std::vector<T>& ga = t.grad(ia);
            for (size_t i = 0; i < n; ++i) {
                size_t rem = i, off = 0;
                for (size_t dmn = 0; dmn < rank; ++dmn) {
                    size_t idx = rem / out_strides[dmn];
                    rem %= out_strides[dmn];
                    off += idx * perm_strides[dmn];
                }
                ga[off] += g[i];
            }
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, size_t axis) {
    if (a.shape.size() != b.shape.size())
        throw ShapeError("concat: rank mismatch: " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    if (axis >= a.shape.size()) throw ShapeError("concat: axis out of range");
    for (size_t i = 0; i < a.shape.size(); ++i)
        if (i != axis && a.shape[i] != b.shape[i])
            throw ShapeError("concat: shapes disagree off-axis: " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));

    Shape out_shape = a.shape;
    out_shape[axis] += b.shape[axis];
    size_t outer = 1;
    for (size_t i = 0; i < axis; ++i) outer *= a.shape[i];
    size_t inner = 1;
    for (size_t i = axis + 1; i < a.shape.size(); ++i) inner *= a.shape[i];
    size_t a_block = a.shape[axis] * inner;
    size_t b_block = b.shape[axis] * inner;

    Tensor<T> out = Tensor<T>::zeros(out_shape);
    for (size_t o = 0; o < outer; ++o) {
        std::copy(a.ptr() + o * a_block, a.ptr() + (o + 1) * a_block,
                  out.ptr() + o * (a_block + b_block));
        std::copy(b.ptr() + o * b_block, b.ptr() + (o + 1) * b_block,
                  out.ptr() + o * (a_block + b_block) + a_block);
    }

    Tape<T>* tp = detail::result_tape(a, b);
    if (tp) {
        int id = tp->alloc(out.size());
        int ia = a.tracked() ? a.node : -1;
        int ib = b.tracked() ? b.node : -1;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            for (size_t o = 0; o < outer; ++o) {
                if (ia >= 0) {
                    std::vector<T>& ga = t.grad(ia);
                    for (size_t i = 0; i < a_block; ++i)
                        ga[o * a_block + i] += g[o * (a_block + b_block) + i];
                }
                if (ib >= 0) {
                    std::vector<T>& gb = t.grad(ib);
                    for (size_t i = 0; i < b_block; ++i)
                        gb[o * b_block + i] += g[o * (a_block + b_block) + a_block + i];
                }
            }
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, size_t axis, size_t start, size_t len) {
    if (axis >= a.shape.size()) throw ShapeError("slice: axis out of range");
    if (start + len > a.shape[axis])
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds axis of extent " +
                         std::to_string(a.shape[axis]));
    Shape out_shape = a.shape;
    out_shape[axis] = len;
    size_t outer = 1;
    for (size_t i = 0; i < axis; ++i) outer *= a.shape[i];
    size_t inner = 1;
    for (size_t i = axis + 1; i < a.shape.size(); ++i) inner *= a.shape[i];
    size_t in_block = a.shape[axis] * inner;
    size_t out_block = len * inner;

    Tensor<T> out = Tensor<T>::zeros(out_shape);
    for (size_t o = 0; o < outer; ++o)
        std::copy(a.ptr() + o * in_block + start * inner,
                  a.ptr() + o * in_block + (start + len) * inner, out.ptr() + o * out_block);

    if (Tape<T>* tp = detail::result_tape(a)) {
        int id = tp->alloc(out.size());
        int ia = a.node;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            std::vector<T>& ga = t.grad(ia);
            for (size_t o = 0; o < outer; ++o)
                for (size_t i = 0; i < out_block; ++i)
                    ga[o * in_block + start * inner + i] += g[o * out_block + i];
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

// Replicate a tensor n times along a new leading axis; backward sums the
// replicas (used to broadcast the class token across a batch).
template <typename T>
Tensor<T> expand_leading(const Tensor<T>& a, size_t n) {
    Shape out_shape;
    out_shape.push_back(n);
    out_shape.insert(out_shape.end(), a.shape.begin(), a.shape.end());
    size_t block = a.size();
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    for (size_t i = 0; i < n; ++i) std::copy(a.ptr(), a.ptr() + block, out.ptr() + i * block);

    if (Tape<T>* tp = detail::result_tape(a)) {
        int id = tp->alloc(out.size());
        int ia = a.node;
        tp->set_backward(id, [=](Tape<T>& t) {
            const std::vector<T>& g = t.grad(id);
            std::vector<T>& ga = t.grad(ia);
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < block; ++j) ga[j] += g[i * block + j];
        });
        out.tape = tp;
        out.node = id;
    }
    return out;
}

}  // namespace emgttl::ad
