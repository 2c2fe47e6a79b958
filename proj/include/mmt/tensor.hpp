#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "mmt/common.hpp"

namespace mmt {

// Dense tensor with reverse-mode autodiff. Scalar type is a template
// parameter: float for training, double for finite-difference checks.
//
// Ops run eagerly and record their adjoint step on a Tape. Execution order is
// a topological order of the graph, so replaying the steps in reverse is a
// valid reverse-topological sweep. A tape is single-use: backward() twice
// throws.

template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // same length as value once requires_grad
    bool requires_grad = false;

    std::size_t size() const { return value.size(); }
    std::size_t rows() const { return shape.size() >= 1 ? shape[0] : 1; }
    std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
};

template <typename T>
class Tape;

template <typename T>
class Var {
public:
    Var() = default;
    Var(std::shared_ptr<TensorData<T>> d, Tape<T>* tape) : d_(std::move(d)), tape_(tape) {}

    const Shape& shape() const { return d_->shape; }
    std::size_t size() const { return d_->size(); }
    std::size_t rows() const { return d_->rows(); }
    std::size_t cols() const { return d_->cols(); }
    bool requires_grad() const { return d_->requires_grad; }

    const std::vector<T>& value() const { return d_->value; }
    const std::vector<T>& grad() const {
        if (!d_->requires_grad) throw internal_error("grad requested on non-grad tensor");
        return d_->grad;
    }

    T item() const {
        if (d_->size() != 1)
            throw shape_error("item() on non-scalar tensor of shape " + shape_str(d_->shape));
        return d_->value[0];
    }

    TensorData<T>* data() const { return d_.get(); }
    std::shared_ptr<TensorData<T>> ptr() const { return d_; }
    Tape<T>* tape() const { return tape_; }

    bool defined() const { return static_cast<bool>(d_); }

private:
    std::shared_ptr<TensorData<T>> d_;
    Tape<T>* tape_ = nullptr;
};

// Learnable parameter living outside any tape. Gradients accumulate here
// after each backward pass; Adam moments ride along.
template <typename T>
struct Param {
    std::string name;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<T> adam_m;
    std::vector<T> adam_v;

    std::size_t size() const { return value.size(); }
};

template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> make(Shape shape, bool requires_grad) {
        auto d = std::make_shared<TensorData<T>>();
        d->shape = std::move(shape);
        d->value.assign(numel(d->shape), T(0));
        d->requires_grad = requires_grad;
        if (requires_grad) d->grad.assign(d->value.size(), T(0));
        return Var<T>(std::move(d), this);
    }

    Var<T> constant(Shape shape, std::vector<T> value) {
        if (numel(shape) != value.size())
            throw shape_error("constant: shape " + shape_str(shape) + " does not match " +
                              std::to_string(value.size()) + " values");
        auto d = std::make_shared<TensorData<T>>();
        d->shape = std::move(shape);
        d->value = std::move(value);
        d->requires_grad = false;
        return Var<T>(std::move(d), this);
    }

    // Copies the parameter in as a leaf; backward() flushes the leaf gradient
    // back into param.grad.
    Var<T> leaf(Param<T>& p) {
        auto v = make(p.shape, true);
        v.data()->value = p.value;
        leaves_.push_back({v.ptr(), &p});
        return v;
    }

    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    void backward(const Var<T>& loss) {
        if (used_) throw internal_error("tape backward replayed without reset");
        used_ = true;
        if (loss.size() != 1)
            throw shape_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw internal_error("backward: loss does not depend on any parameter");
        loss.data()->grad[0] = T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
        for (auto& [node, param] : leaves_) {
            if (param->grad.empty()) param->grad.assign(param->value.size(), T(0));
            if (param->grad.size() != node->grad.size())
                throw internal_error("leaf gradient size mismatch for " + param->name);
            for (std::size_t i = 0; i < node->grad.size(); ++i) param->grad[i] += node->grad[i];
        }
    }

    bool consumed() const { return used_; }
    std::size_t num_steps() const { return steps_.size(); }

private:
    std::vector<std::function<void()>> steps_;
    std::vector<std::pair<std::shared_ptr<TensorData<T>>, Param<T>*>> leaves_;
    bool used_ = false;
};

namespace detail {

template <typename T>
Tape<T>* common_tape(const Var<T>& a, const Var<T>& b) {
    if (a.tape() != b.tape())
        throw internal_error("operands come from different tapes");
    return a.tape();
}

template <typename T>
void check_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise binary ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("add", a, b);
    auto* tape = detail::common_tape(a, b);
    auto out = tape->make(a.shape(), a.requires_grad() || b.requires_grad());
    auto *ad = a.data(), *bd = b.data(), *od = out.data();
    for (std::size_t i = 0; i < od->size(); ++i) od->value[i] = ad->value[i] + bd->value[i];
    if (out.requires_grad())
        tape->record([pa = a.ptr(), pb = b.ptr(), po = out.ptr()] {
            for (std::size_t i = 0; i < po->size(); ++i) {
                if (pa->requires_grad) pa->grad[i] += po->grad[i];
                if (pb->requires_grad) pb->grad[i] += po->grad[i];
            }
        });
    return out;
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("sub", a, b);
    auto* tape = detail::common_tape(a, b);
    auto out = tape->make(a.shape(), a.requires_grad() || b.requires_grad());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()->value[i] = a.value()[i] - b.value()[i];
    if (out.requires_grad())
        tape->record([pa = a.ptr(), pb = b.ptr(), po = out.ptr()] {
            for (std::size_t i = 0; i < po->size(); ++i) {
                if (pa->requires_grad) pa->grad[i] += po->grad[i];
                if (pb->requires_grad) pb->grad[i] -= po->grad[i];
            }
        });
    return out;
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("mul", a, b);
    auto* tape = detail::common_tape(a, b);
    auto out = tape->make(a.shape(), a.requires_grad() || b.requires_grad());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()->value[i] = a.value()[i] * b.value()[i];
    if (out.requires_grad())
        tape->record([pa = a.ptr(), pb = b.ptr(), po = out.ptr()] {
            for (std::size_t i = 0; i < po->size(); ++i) {
                if (pa->requires_grad) pa->grad[i] += po->grad[i] * pb->value[i];
                if (pb->requires_grad) pb->grad[i] += po->grad[i] * pa->value[i];
            }
        });
    return out;
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("div", a, b);
    auto* tape = detail::common_tape(a, b);
    auto out = tape->make(a.shape(), a.requires_grad() || b.requires_grad());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()->value[i] = a.value()[i] / b.value()[i];
    if (out.requires_grad())
        tape->record([pa = a.ptr(), pb = b.ptr(), po = out.ptr()] {
            for (std::size_t i = 0; i < po->size(); ++i) {
                const T inv = T(1) / pb->value[i];
                if (pa->requires_grad) pa->grad[i] += po->grad[i] * inv;
                if (pb->requires_grad)
                    pb->grad[i] -= po->grad[i] * pa->value[i] * inv * inv;
            }
        });
    return out;
}

// ---- scalar-constant ops ----

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
    auto out = a.tape()->make(a.shape(), a.requires_grad());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()->value[i] = a.value()[i] * c;
    if (out.requires_grad())
        a.tape()->record([pa = a.ptr(), po = out.ptr(), c] {
            for (std::size_t i = 0; i < po->size(); ++i) pa->grad[i] += po->grad[i] * c;
        });
    return out;
}

template <typename T>
Var<T> add_const(const Var<T>& a, T c) {
    auto out = a.tape()->make(a.shape(), a.requires_grad());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()->value[i] = a.value()[i] + c;
    if (out.requires_grad())
        a.tape()->record([pa = a.ptr(), po = out.ptr()] {
            for (std::size_t i = 0; i < po->size(); ++i) pa->grad[i] += po->grad[i];
        });
    return out;
}

// Broadcast a one-element tensor across all elements of x: out = x - s.
template <typename T>
Var<T> sub_bcast(const Var<T>& x, const Var<T>& s) {
    if (s.size() != 1)
        throw shape_error("sub_bcast: broadcast operand must be scalar, got " + shape_str(s.shape()));
    auto* tape = detail::common_tape(x, s);
    auto out = tape->make(x.shape(), x.requires_grad() || s.requires_grad());
    const T sv = s.value()[0];
    for (std::size_t i = 0; i < out.size(); ++i) out.data()->value[i] = x.value()[i] - sv;
    if (out.requires_grad())
        tape->record([px = x.ptr(), ps = s.ptr(), po = out.ptr()] {
            T acc = T(0);
            for (std::size_t i = 0; i < po->size(); ++i) {
                if (px->requires_grad) px->grad[i] += po->grad[i];
                acc += po->grad[i];
            }
            if (ps->requires_grad) ps->grad[0] -= acc;
        });
    return out;
}

// ---- elementwise unary ----

namespace detail {

template <typename T, typename F, typename DF>
Var<T> unary_op(const Var<T>& a, F fwd, DF dfwd) {
    auto out = a.tape()->make(a.shape(), a.requires_grad());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()->value[i] = fwd(a.value()[i]);
    if (out.requires_grad())
        a.tape()->record([pa = a.ptr(), po = out.ptr(), dfwd] {
            for (std::size_t i = 0; i < po->size(); ++i)
                pa->grad[i] += po->grad[i] * dfwd(pa->value[i], po->value[i]);
        });
    return out;
}

}  // namespace detail

template <typename T>
Var<T> relu(const Var<T>& a) {
    return detail::unary_op(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    return detail::unary_op(
        a,
        [](T x) {
            // split on sign for stability
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh_op(const Var<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

// ---- matmul / transpose ----

namespace detail {

template <typename T>
void matmul_kernel(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    // c[m,n] += a[m,k] * b[k,n], c pre-zeroed by caller; ikj order
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const T av = arow[l];
            if (av == T(0)) continue;
            const T* brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] += a[k,m]^T * b[k,n]
template <typename T>
void matmul_at_b(const T* a, const T* b, T* c, std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t l = 0; l < k; ++l) {
        const T* arow = a + l * m;
        const T* brow = b + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,k] += a[m,n] * b[k,n]^T
template <typename T>
void matmul_a_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * n;
        T* crow = c + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const T* brow = b + l * n;
            T acc = T(0);
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[l] += acc;
        }
    }
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool batched = sa.size() == 3 && sb.size() == 3;
    if (!((sa.size() == 2 && sb.size() == 2) || batched))
        throw shape_error("matmul: unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
    if (batched && sa[0] != sb[0])
        throw shape_error("matmul: batch dims disagree " + shape_str(sa) + " x " + shape_str(sb));
    const std::size_t B = batched ? sa[0] : 1;
    const std::size_t M = sa[sa.size() - 2], K = sa.back();
    const std::size_t K2 = sb[sb.size() - 2], N = sb.back();
    if (K != K2)
        throw shape_error("matmul: inner dims disagree " + shape_str(sa) + " x " + shape_str(sb));

    auto* tape = detail::common_tape(a, b);
    Shape os = batched ? Shape{B, M, N} : Shape{M, N};
    auto out = tape->make(os, a.requires_grad() || b.requires_grad());
    for (std::size_t bi = 0; bi < B; ++bi)
        detail::matmul_kernel(a.value().data() + bi * M * K, b.value().data() + bi * K * N,
                              out.data()->value.data() + bi * M * N, M, K, N);
    if (out.requires_grad())
        tape->record([pa = a.ptr(), pb = b.ptr(), po = out.ptr(), B, M, K, N] {
            for (std::size_t bi = 0; bi < B; ++bi) {
                const T* g = po->grad.data() + bi * M * N;
                if (pa->requires_grad)  // dA += g * B^T
                    detail::matmul_a_bt(g, pb->value.data() + bi * K * N,
                                        pa->grad.data() + bi * M * K, M, N, K);
                if (pb->requires_grad)  // dB += A^T * g, summing over the M rows
                    detail::matmul_at_b(pa->value.data() + bi * M * K, g,
                                        pb->grad.data() + bi * K * N, M, K, N);
            }
        });
    return out;
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
    if (a.shape().size() != 2)
        throw shape_error("transpose: expected rank 2, got " + shape_str(a.shape()));
    const std::size_t R = a.shape()[0], C = a.shape()[1];
    auto out = a.tape()->make({C, R}, a.requires_grad());
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) out.data()->value[j * R + i] = a.value()[i * C + j];
    if (out.requires_grad())
        a.tape()->record([pa = a.ptr(), po = out.ptr(), R, C] {
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < C; ++j) pa->grad[i * C + j] += po->grad[j * R + i];
        });
    return out;
}

// ---- softmax over the last axis of a rank-2 tensor ----

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
    if (x.shape().size() != 2)
        throw shape_error("softmax_rows: expected rank 2, got " + shape_str(x.shape()));
    const std::size_t R = x.shape()[0], C = x.shape()[1];
    auto out = x.tape()->make(x.shape(), x.requires_grad());
    for (std::size_t i = 0; i < R; ++i) {
        const T* row = x.value().data() + i * C;
        T* o = out.data()->value.data() + i * C;
        T mx = row[0];
        for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < C; ++j) {
            o[j] = std::exp(row[j] - mx);
            sum += o[j];
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j < C; ++j) o[j] *= inv;
    }
    if (out.requires_grad())
        x.tape()->record([px = x.ptr(), po = out.ptr(), R, C] {
            for (std::size_t i = 0; i < R; ++i) {
                const T* s = po->value.data() + i * C;
                const T* g = po->grad.data() + i * C;
                T dot = T(0);
                for (std::size_t j = 0; j < C; ++j) dot += g[j] * s[j];
                T* d = px->grad.data() + i * C;
                for (std::size_t j = 0; j < C; ++j) d[j] += s[j] * (g[j] - dot);
            }
        });
    return out;
}

// ---- layer normalization over the last axis ----

template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
    if (x.shape().size() != 2)
        throw shape_error("layernorm: expected rank 2, got " + shape_str(x.shape()));
    const std::size_t R = x.shape()[0], C = x.shape()[1];
    if (gain.size() != C || bias.size() != C)
        throw shape_error("layernorm: gain/bias size must match last axis " + std::to_string(C));
    if (eps <= T(0)) throw config_error("layernorm: eps must be positive");
    auto* tape = x.tape();
    auto out = tape->make(x.shape(),
                          x.requires_grad() || gain.requires_grad() || bias.requires_grad());
    std::vector<T> invstd(R), xhat(R * C);
    for (std::size_t i = 0; i < R; ++i) {
        const T* row = x.value().data() + i * C;
        T mean = T(0);
        for (std::size_t j = 0; j < C; ++j) mean += row[j];
        mean /= T(C);
        T var = T(0);
        for (std::size_t j = 0; j < C; ++j) {
            const T d = row[j] - mean;
            var += d * d;
        }
        var /= T(C);
        const T inv = T(1) / std::sqrt(var + eps);
        invstd[i] = inv;
        for (std::size_t j = 0; j < C; ++j) {
            const T h = (row[j] - mean) * inv;
            xhat[i * C + j] = h;
            out.data()->value[i * C + j] = gain.value()[j] * h + bias.value()[j];
        }
    }
    if (out.requires_grad())
        tape->record([px = x.ptr(), pg = gain.ptr(), pb = bias.ptr(), po = out.ptr(),
                      invstd = std::move(invstd), xhat = std::move(xhat), R, C] {
            for (std::size_t i = 0; i < R; ++i) {
                const T* g = po->grad.data() + i * C;
                const T* h = xhat.data() + i * C;
                if (pb->requires_grad)
                    for (std::size_t j = 0; j < C; ++j) pb->grad[j] += g[j];
                if (pg->requires_grad)
                    for (std::size_t j = 0; j < C; ++j) pg->grad[j] += g[j] * h[j];
                if (px->requires_grad) {
                    T mean_dh = T(0), mean_dhh = T(0);
                    for (std::size_t j = 0; j < C; ++j) {
                        const T dh = g[j] * pg->value[j];
                        mean_dh += dh;
                        mean_dhh += dh * h[j];
                    }
                    mean_dh /= T(C);
                    mean_dhh /= T(C);
                    for (std::size_t j = 0; j < C; ++j) {
                        const T dh = g[j] * pg->value[j];
                        px->grad[i * C + j] += invstd[i] * (dh - mean_dh - h[j] * mean_dhh);
                    }
                }
            }
        });
    return out;
}

// ---- temporal convolution, same padding, odd kernel ----

// x: [T, Din], kernel: [k, Din, Dout], bias: [Dout] -> [T, Dout]
template <typename T>
Var<T> conv1d_temporal(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias) {
    if (x.shape().size() != 2 || kernel.shape().size() != 3)
        throw shape_error("conv1d_temporal: expected x rank 2 and kernel rank 3, got " +
                          shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
    const std::size_t Tn = x.shape()[0], Din = x.shape()[1];
    const std::size_t kh = kernel.shape()[0], Dout = kernel.shape()[2];
    if (kh % 2 == 0)
        throw config_error("conv1d_temporal: kernel size must be odd for same padding, got " +
                           std::to_string(kh));
    if (kernel.shape()[1] != Din)
        throw shape_error("conv1d_temporal: kernel input dim " + shape_str(kernel.shape()) +
                          " does not match x " + shape_str(x.shape()));
    if (bias.size() != Dout) throw shape_error("conv1d_temporal: bias size mismatch");
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kh) / 2;
    auto* tape = x.tape();
    auto out = tape->make({Tn, Dout}, x.requires_grad() || kernel.requires_grad() ||
                                          bias.requires_grad());
    for (std::size_t t = 0; t < Tn; ++t) {
        T* orow = out.data()->value.data() + t * Dout;
        for (std::size_t o = 0; o < Dout; ++o) orow[o] = bias.value()[o];
        for (std::size_t tau = 0; tau < kh; ++tau) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + tau) - pad;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(Tn)) continue;
            const T* xrow = x.value().data() + static_cast<std::size_t>(src) * Din;
            const T* kslice = kernel.value().data() + tau * Din * Dout;
            for (std::size_t j = 0; j < Din; ++j) {
                const T xv = xrow[j];
                if (xv == T(0)) continue;
                const T* krow = kslice + j * Dout;
                for (std::size_t o = 0; o < Dout; ++o) orow[o] += xv * krow[o];
            }
        }
    }
    if (out.requires_grad())
        tape->record([px = x.ptr(), pk = kernel.ptr(), pb = bias.ptr(), po = out.ptr(), Tn, Din,
                      kh, Dout, pad] {
            for (std::size_t t = 0; t < Tn; ++t) {
                const T* g = po->grad.data() + t * Dout;
                if (pb->requires_grad)
                    for (std::size_t o = 0; o < Dout; ++o) pb->grad[o] += g[o];
                for (std::size_t tau = 0; tau < kh; ++tau) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + tau) - pad;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(Tn)) continue;
                    const std::size_t s = static_cast<std::size_t>(src);
                    for (std::size_t j = 0; j < Din; ++j) {
                        const T xv = px->value[s * Din + j];
                        const T* krow = pk->value.data() + (tau * Din + j) * Dout;
                        T accx = T(0);
                        for (std::size_t o = 0; o < Dout; ++o) {
                            if (pk->requires_grad)
                                pk->grad[(tau * Din + j) * Dout + o] += xv * g[o];
                            accx += krow[o] * g[o];
                        }
                        if (px->requires_grad) px->grad[s * Din + j] += accx;
                    }
                }
            }
        });
    return out;
}

// ---- slicing / concatenation ----

template <typename T>
Var<T> col_slice(const Var<T>& x, std::size_t c0, std::size_t c1) {
    if (x.shape().size() != 2 || c1 > x.shape()[1] || c0 >= c1)
        throw shape_error("col_slice: bad range [" + std::to_string(c0) + "," +
                          std::to_string(c1) + ") for " + shape_str(x.shape()));
    const std::size_t R = x.shape()[0], C = x.shape()[1], W = c1 - c0;
    auto out = x.tape()->make({R, W}, x.requires_grad());
    for (std::size_t i = 0; i < R; ++i)
        std::copy_n(x.value().data() + i * C + c0, W, out.data()->value.data() + i * W);
    if (out.requires_grad())
        x.tape()->record([px = x.ptr(), po = out.ptr(), R, C, c0, W] {
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < W; ++j)
                    px->grad[i * C + c0 + j] += po->grad[i * W + j];
        });
    return out;
}

template <typename T>
Var<T> row_slice(const Var<T>& x, std::size_t r0, std::size_t r1) {
    if (x.shape().size() != 2 || r1 > x.shape()[0] || r0 >= r1)
        throw shape_error("row_slice: bad range [" + std::to_string(r0) + "," +
                          std::to_string(r1) + ") for " + shape_str(x.shape()));
    const std::size_t C = x.shape()[1], H = r1 - r0;
    auto out = x.tape()->make({H, C}, x.requires_grad());
    std::copy_n(x.value().data() + r0 * C, H * C, out.data()->value.data());
    if (out.requires_grad())
        x.tape()->record([px = x.ptr(), po = out.ptr(), r0, C, H] {
            for (std::size_t i = 0; i < H * C; ++i) px->grad[r0 * C + i] += po->grad[i];
        });
    return out;
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: no operands");
    const std::size_t R = parts[0].shape()[0];
    std::size_t Ctot = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.shape()[0] != R)
            throw shape_error("concat_cols: row mismatch " + shape_str(p.shape()));
        Ctot += p.shape()[1];
        rg = rg || p.requires_grad();
    }
    auto* tape = parts[0].tape();
    auto out = tape->make({R, Ctot}, rg);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t C = p.shape()[1];
        for (std::size_t i = 0; i < R; ++i)
            std::copy_n(p.value().data() + i * C, C, out.data()->value.data() + i * Ctot + off);
        off += C;
    }
    if (rg) {
        std::vector<std::shared_ptr<TensorData<T>>> srcs;
        for (const auto& p : parts) srcs.push_back(p.ptr());
        tape->record([srcs = std::move(srcs), po = out.ptr(), R, Ctot] {
            std::size_t off = 0;
            for (const auto& s : srcs) {
                const std::size_t C = s->shape[1];
                if (s->requires_grad)
                    for (std::size_t i = 0; i < R; ++i)
                        for (std::size_t j = 0; j < C; ++j)
                            s->grad[i * C + j] += po->grad[i * Ctot + off + j];
                off += C;
            }
        });
    }
    return out;
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw shape_error("concat_rows: no operands");
    const std::size_t C = parts[0].shape()[1];
    std::size_t Rtot = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.shape()[1] != C)
            throw shape_error("concat_rows: column mismatch " + shape_str(p.shape()));
        Rtot += p.shape()[0];
        rg = rg || p.requires_grad();
    }
    auto* tape = parts[0].tape();
    auto out = tape->make({Rtot, C}, rg);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.value().data(), p.size(), out.data()->value.data() + off);
        off += p.size();
    }
    if (rg) {
        std::vector<std::shared_ptr<TensorData<T>>> srcs;
        for (const auto& p : parts) srcs.push_back(p.ptr());
        tape->record([srcs = std::move(srcs), po = out.ptr()] {
            std::size_t off = 0;
            for (const auto& s : srcs) {
                if (s->requires_grad)
                    for (std::size_t i = 0; i < s->value.size(); ++i)
                        s->grad[i] += po->grad[off + i];
                off += s->value.size();
            }
        });
    }
    return out;
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    if (numel(shape) != x.size())
        throw shape_error("reshape: cannot view " + shape_str(x.shape()) + " as " +
                          shape_str(shape));
    auto out = x.tape()->make(shape, x.requires_grad());
    out.data()->value = x.value();
    if (out.requires_grad())
        x.tape()->record([px = x.ptr(), po = out.ptr()] {
            for (std::size_t i = 0; i < po->size(); ++i) px->grad[i] += po->grad[i];
        });
    return out;
}

// ---- reductions ----

template <typename T>
Var<T> sum_all(const Var<T>& x) {
    auto out = x.tape()->make({1}, x.requires_grad());
    T acc = T(0);
    for (T v : x.value()) acc += v;
    out.data()->value[0] = acc;
    if (out.requires_grad())
        x.tape()->record([px = x.ptr(), po = out.ptr()] {
            const T g = po->grad[0];
            for (std::size_t i = 0; i < px->size(); ++i) px->grad[i] += g;
        });
    return out;
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    return scale(sum_all(x), T(1) / T(x.size()));
}

// ---- row-broadcast bias add: x[T,D] + b[D] ----

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
    if (x.shape().size() != 2 || b.size() != x.shape()[1])
        throw shape_error("add_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const std::size_t R = x.shape()[0], C = x.shape()[1];
    auto* tape = detail::common_tape(x, b);
    auto out = tape->make(x.shape(), x.requires_grad() || b.requires_grad());
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j)
            out.data()->value[i * C + j] = x.value()[i * C + j] + b.value()[j];
    if (out.requires_grad())
        tape->record([px = x.ptr(), pb = b.ptr(), po = out.ptr(), R, C] {
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < C; ++j) {
                    if (px->requires_grad) px->grad[i * C + j] += po->grad[i * C + j];
                    if (pb->requires_grad) pb->grad[j] += po->grad[i * C + j];
                }
        });
    return out;
}

// ---- inverted dropout ----

template <typename T>
Var<T> dropout(const Var<T>& x, double p, Rng& rng, bool train) {
    if (p < 0.0 || p >= 1.0) throw config_error("dropout: rate must be in [0,1)");
    if (!train || p == 0.0) return x;
    const T keep_scale = T(1.0 / (1.0 - p));
    auto out = x.tape()->make(x.shape(), x.requires_grad());
    std::vector<T> mask(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        mask[i] = rng.next_uniform() < p ? T(0) : keep_scale;
    for (std::size_t i = 0; i < x.size(); ++i) out.data()->value[i] = x.value()[i] * mask[i];
    if (out.requires_grad())
        x.tape()->record([px = x.ptr(), po = out.ptr(), mask = std::move(mask)] {
            for (std::size_t i = 0; i < po->size(); ++i) px->grad[i] += po->grad[i] * mask[i];
        });
    return out;
}

// ---- losses ----

// Mean absolute error over masked rows only: sum_{t in mask} |pred - target| / (n_masked * D).
template <typename T>
Var<T> l1_masked(const Var<T>& pred, const Var<T>& target, const std::vector<bool>& row_mask) {
    detail::check_same_shape("l1_masked", pred, target);
    if (pred.shape().size() != 2 || row_mask.size() != pred.shape()[0])
        throw shape_error("l1_masked: mask length " + std::to_string(row_mask.size()) +
                          " vs rows " + std::to_string(pred.shape()[0]));
    const std::size_t R = pred.shape()[0], C = pred.shape()[1];
    std::size_t n_masked = 0;
    for (bool m : row_mask) n_masked += m ? 1 : 0;
    if (n_masked == 0) throw shape_error("l1_masked: mask selects no rows");
    auto* tape = pred.tape();
    auto out = tape->make({1}, pred.requires_grad() || target.requires_grad());
    const T norm = T(1) / (T(n_masked) * T(C));
    T acc = T(0);
    for (std::size_t i = 0; i < R; ++i) {
        if (!row_mask[i]) continue;
        for (std::size_t j = 0; j < C; ++j)
            acc += std::abs(pred.value()[i * C + j] - target.value()[i * C + j]);
    }
    out.data()->value[0] = acc * norm;
    if (out.requires_grad())
        tape->record([pp = pred.ptr(), pt = target.ptr(), po = out.ptr(), row_mask, R, C, norm] {
            const T g = po->grad[0] * norm;
            for (std::size_t i = 0; i < R; ++i) {
                if (!row_mask[i]) continue;
                for (std::size_t j = 0; j < C; ++j) {
                    const T d = pp->value[i * C + j] - pt->value[i * C + j];
                    const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                    if (pp->requires_grad) pp->grad[i * C + j] += g * s;
                    if (pt->requires_grad) pt->grad[i * C + j] -= g * s;
                }
            }
        });
    return out;
}

// Raw float32 frames as a constant on the tape, widened to the tape's
// scalar type.
template <typename T>
Var<T> to_var(Tape<T>& tape, const FrameMatrix& m) {
    std::vector<T> data(m.v.begin(), m.v.end());
    return tape.constant({m.rows, m.cols}, std::move(data));
}

// Cross entropy of a single-row logit vector against an integer label.
template <typename T>
Var<T> cross_entropy_logits(const Var<T>& logits, std::size_t label) {
    if (logits.shape().size() != 2 || logits.shape()[0] != 1)
        throw shape_error("cross_entropy_logits: expected [1,C], got " + shape_str(logits.shape()));
    const std::size_t C = logits.shape()[1];
    if (label >= C) throw shape_error("cross_entropy_logits: label out of range");
    auto out = logits.tape()->make({1}, logits.requires_grad());
    const T* z = logits.value().data();
    T mx = z[0];
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, z[j]);
    T sum = T(0);
    std::vector<T> soft(C);
    for (std::size_t j = 0; j < C; ++j) {
        soft[j] = std::exp(z[j] - mx);
        sum += soft[j];
    }
    for (std::size_t j = 0; j < C; ++j) soft[j] /= sum;
    out.data()->value[0] = std::log(sum) + mx - z[label];
    if (out.requires_grad())
        logits.tape()->record([pl = logits.ptr(), po = out.ptr(), soft = std::move(soft), label] {
            const T g = po->grad[0];
            for (std::size_t j = 0; j < soft.size(); ++j)
                pl->grad[j] += g * (soft[j] - (j == label ? T(1) : T(0)));
        });
    return out;
}

}  // namespace mmt
