#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "msc/geometry.hpp"
#include "msc/kernels.hpp"
#include "msc/tensor.hpp"

// Tape-based reverse-mode differentiation. Ops append their output value and
// a backward closure in topological order; backward() replays the closures in
// reverse. Gradient accumulation order is fixed by the tape order and by the
// per-element loops inside each closure, so gradients are bit-reproducible.

namespace msc {

template <typename S>
class Tape;

template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;

    const Tensor<S>& val() const { return tape->val(id); }
    const Tensor<S>& grad() const { return tape->grad(id); }
    bool requires_grad() const { return tape->wants_grad(id); }
};

template <typename S>
class Tape {
  public:
    Var<S> leaf(Tensor<S> value, bool requires_grad = false) {
        ensure_finite(value, "leaf");
        return Var<S>{this, push(std::move(value), requires_grad)};
    }

    int push(Tensor<S> value, bool requires_grad) {
        Slot slot;
        slot.grad = Tensor<S>::zeros(value.shape);
        slot.value = std::move(value);
        slot.requires_grad = requires_grad;
        slots_.push_back(std::move(slot));
        return static_cast<int>(slots_.size()) - 1;
    }

    void record(std::function<void(Tape<S>&)> op) { ops_.push_back(std::move(op)); }

    const Tensor<S>& val(int id) const { return slots_[static_cast<std::size_t>(id)].value; }
    const Tensor<S>& grad(int id) const { return slots_[static_cast<std::size_t>(id)].grad; }
    Tensor<S>& grad_mut(int id) { return slots_[static_cast<std::size_t>(id)].grad; }
    bool wants_grad(int id) const { return slots_[static_cast<std::size_t>(id)].requires_grad; }
    std::size_t num_slots() const { return slots_.size(); }

    // Gradient of a scalar loss w.r.t. every requires_grad slot.
    void backward(const Var<S>& loss) {
        if (loss.tape != this) throw ConfigError("backward: loss from another tape");
        if (val(loss.id).numel() != 1) throw ConfigError("backward: loss must be scalar");
        for (auto& s : slots_) std::fill(s.grad.data.begin(), s.grad.data.end(), S(0));
        grad_mut(loss.id)[0] = S(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
    }

  private:
    struct Slot {
        Tensor<S> value;
        Tensor<S> grad;
        bool requires_grad = false;
    };
    std::vector<Slot> slots_;
    std::vector<std::function<void(Tape<S>&)>> ops_;
};

namespace ag_detail {

template <typename S>
Tape<S>& same_tape(const Var<S>& a, const Var<S>& b) {
    if (a.tape == nullptr || a.tape != b.tape) throw ConfigError("op: operands from different tapes");
    return *a.tape;
}

template <typename S>
void check_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
    if (a.val().shape != b.val().shape)
        throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.val().shape) + " vs " +
                          shape_str(b.val().shape));
}

template <typename S>
Var<S> emit(Tape<S>& t, Tensor<S> out, bool rg, const char* name) {
    ensure_finite(out, name);
    return Var<S>{&t, t.push(std::move(out), rg)};
}

}  // namespace ag_detail

// ---------------------------------------------------------------------------
// elementwise and broadcast ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    auto& t = ag_detail::same_tape(a, b);
    ag_detail::check_same_shape(a, b, "add");
    Tensor<S> out = a.val();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.val()[i];
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "add");
    if (rg)
        t.record([a = a.id, b = b.id, y = y.id](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            if (tp.wants_grad(a)) {
                Tensor<S>& ga = tp.grad_mut(a);
                for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
            }
            if (tp.wants_grad(b)) {
                Tensor<S>& gb = tp.grad_mut(b);
                for (std::int64_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i];
            }
        });
    return y;
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    auto& t = ag_detail::same_tape(a, b);
    ag_detail::check_same_shape(a, b, "sub");
    Tensor<S> out = a.val();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.val()[i];
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "sub");
    if (rg)
        t.record([a = a.id, b = b.id, y = y.id](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            if (tp.wants_grad(a)) {
                Tensor<S>& ga = tp.grad_mut(a);
                for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
            }
            if (tp.wants_grad(b)) {
                Tensor<S>& gb = tp.grad_mut(b);
                for (std::int64_t i = 0; i < gy.numel(); ++i) gb[i] -= gy[i];
            }
        });
    return y;
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
    auto& t = ag_detail::same_tape(a, b);
    ag_detail::check_same_shape(a, b, "mul");
    Tensor<S> out = a.val();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.val()[i];
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "mul");
    if (rg)
        t.record([a = a.id, b = b.id, y = y.id](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            if (tp.wants_grad(a)) {
                Tensor<S>& ga = tp.grad_mut(a);
                const Tensor<S>& bv = tp.val(b);
                for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * bv[i];
            }
            if (tp.wants_grad(b)) {
                Tensor<S>& gb = tp.grad_mut(b);
                const Tensor<S>& av = tp.val(a);
                for (std::int64_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i] * av[i];
            }
        });
    return y;
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
    Tape<S>& t = *a.tape;
    Tensor<S> out = a.val();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    const bool rg = a.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "scale");
    if (rg)
        t.record([a = a.id, y = y.id, c](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            Tensor<S>& ga = tp.grad_mut(a);
            for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * c;
        });
    return y;
}

template <typename S>
Var<S> sub_const(Var<S> a, const Tensor<S>& c) {
    Tape<S>& t = *a.tape;
    if (a.val().shape != c.shape) throw ConfigError("sub_const: shape mismatch");
    Tensor<S> out = a.val();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= c[i];
    const bool rg = a.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "sub_const");
    if (rg)
        t.record([a = a.id, y = y.id](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            Tensor<S>& ga = tp.grad_mut(a);
            for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
        });
    return y;
}

// x: [rows, n], b: [n]; adds b to every row.
template <typename S>
Var<S> add_rowvec(Var<S> x, Var<S> b) {
    auto& t = ag_detail::same_tape(x, b);
    if (x.val().shape.size() != 2 || b.val().shape.size() != 1 ||
        x.val().dim(1) != b.val().dim(0))
        throw ConfigError("add_rowvec: expected [rows,n] and [n]");
    const std::int64_t rows = x.val().dim(0), n = x.val().dim(1);
    Tensor<S> out = x.val();
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < n; ++j) out[r * n + j] += b.val()[j];
    const bool rg = x.requires_grad() || b.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "add_rowvec");
    if (rg)
        t.record([x = x.id, b = b.id, y = y.id, rows, n](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            if (tp.wants_grad(x)) {
                Tensor<S>& gx = tp.grad_mut(x);
                for (std::int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
            }
            if (tp.wants_grad(b)) {
                Tensor<S>& gb = tp.grad_mut(b);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < n; ++j) gb[j] += gy[r * n + j];
            }
        });
    return y;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reshape(Var<S> a, Shape sh) {
    Tape<S>& t = *a.tape;
    if (shape_numel(sh) != a.val().numel()) throw ConfigError("reshape: element count mismatch");
    Tensor<S> out(std::move(sh), a.val().data);
    const bool rg = a.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "reshape");
    if (rg)
        t.record([a = a.id, y = y.id](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            Tensor<S>& ga = tp.grad_mut(a);
            for (std::int64_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
        });
    return y;
}

template <typename S>
Var<S> slice_cols(Var<S> x, std::int64_t c0, std::int64_t c1) {
    Tape<S>& t = *x.tape;
    if (x.val().shape.size() != 2) throw ConfigError("slice_cols: expected rank-2 input");
    const std::int64_t rows = x.val().dim(0), cols = x.val().dim(1);
    if (c0 < 0 || c1 > cols || c0 >= c1) throw ConfigError("slice_cols: bad column range");
    const std::int64_t w = c1 - c0;
    Tensor<S> out = Tensor<S>::zeros({rows, w});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < w; ++j) out[r * w + j] = x.val()[r * cols + c0 + j];
    const bool rg = x.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "slice_cols");
    if (rg)
        t.record([x = x.id, y = y.id, rows, cols, c0, w](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            Tensor<S>& gx = tp.grad_mut(x);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < w; ++j) gx[r * cols + c0 + j] += gy[r * w + j];
        });
    return y;
}

template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
    auto& t = ag_detail::same_tape(a, b);
    if (a.val().shape.size() != 2 || b.val().shape.size() != 2 || a.val().dim(0) != b.val().dim(0))
        throw ConfigError("concat_cols: expected rank-2 inputs with equal row count");
    const std::int64_t rows = a.val().dim(0), ca = a.val().dim(1), cb = b.val().dim(1);
    Tensor<S> out = Tensor<S>::zeros({rows, ca + cb});
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < ca; ++j) out[r * (ca + cb) + j] = a.val()[r * ca + j];
        for (std::int64_t j = 0; j < cb; ++j) out[r * (ca + cb) + ca + j] = b.val()[r * cb + j];
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "concat_cols");
    if (rg)
        t.record([a = a.id, b = b.id, y = y.id, rows, ca, cb](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            if (tp.wants_grad(a)) {
                Tensor<S>& ga = tp.grad_mut(a);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < ca; ++j) ga[r * ca + j] += gy[r * (ca + cb) + j];
            }
            if (tp.wants_grad(b)) {
                Tensor<S>& gb = tp.grad_mut(b);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < cb; ++j) gb[r * cb + j] += gy[r * (ca + cb) + ca + j];
            }
        });
    return y;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
    auto& t = ag_detail::same_tape(a, b);
    if (a.val().shape.size() != 2 || b.val().shape.size() != 2)
        throw ConfigError("matmul: expected rank-2 operands");
    const std::int64_t m = a.val().dim(0), k = a.val().dim(1);
    const std::int64_t k2 = b.val().dim(0), n = b.val().dim(1);
    if (k != k2)
        throw ConfigError("matmul: inner dimensions differ: " + shape_str(a.val().shape) + " x " +
                          shape_str(b.val().shape));
    Tensor<S> out = Tensor<S>::zeros({m, n});
    kern::gemm_auto<S>(false, false, m, n, k, a.val().ptr(), b.val().ptr(), out.ptr(), false);
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "matmul");
    if (rg)
        t.record([a = a.id, b = b.id, y = y.id, m, n, k](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            if (tp.wants_grad(a)) {
                // dA += dY * B^T
                kern::gemm_auto<S>(false, true, m, k, n, gy.ptr(), tp.val(b).ptr(),
                                   tp.grad_mut(a).ptr(), true);
            }
            if (tp.wants_grad(b)) {
                // dB += A^T * dY
                kern::gemm_auto<S>(true, false, k, n, m, tp.val(a).ptr(), gy.ptr(),
                                   tp.grad_mut(b).ptr(), true);
            }
        });
    return y;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum_all(Var<S> a) {
    Tape<S>& t = *a.tape;
    S s = 0;
    for (std::int64_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
    const bool rg = a.requires_grad();
    Var<S> y = ag_detail::emit(t, Tensor<S>({1}, {s}), rg, "sum");
    if (rg)
        t.record([a = a.id, y = y.id](Tape<S>& tp) {
            const S g = tp.grad(y)[0];
            Tensor<S>& ga = tp.grad_mut(a);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
        });
    return y;
}

template <typename S>
Var<S> mean_all(Var<S> a) {
    return scale(sum_all(a), S(1) / static_cast<S>(a.val().numel()));
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sigmoid(Var<S> a) {
    Tape<S>& t = *a.tape;
    Tensor<S> out = a.val();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = S(1) / (S(1) + std::exp(-out[i]));
    const bool rg = a.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "sigmoid");
    if (rg)
        t.record([a = a.id, y = y.id](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            const Tensor<S>& yv = tp.val(y);
            Tensor<S>& ga = tp.grad_mut(a);
            for (std::int64_t i = 0; i < gy.numel(); ++i)
                ga[i] += gy[i] * yv[i] * (S(1) - yv[i]);
        });
    return y;
}

template <typename S>
Var<S> silu(Var<S> a) {
    Tape<S>& t = *a.tape;
    Tensor<S> out = a.val();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const S sg = S(1) / (S(1) + std::exp(-out[i]));
        out[i] = out[i] * sg;
    }
    const bool rg = a.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "silu");
    if (rg)
        t.record([a = a.id, y = y.id](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            const Tensor<S>& xv = tp.val(a);
            Tensor<S>& ga = tp.grad_mut(a);
            for (std::int64_t i = 0; i < gy.numel(); ++i) {
                const S sg = S(1) / (S(1) + std::exp(-xv[i]));
                ga[i] += gy[i] * sg * (S(1) + xv[i] * (S(1) - sg));
            }
        });
    return y;
}

// ---------------------------------------------------------------------------
// layer norm over the last dimension (eps fixed at 1e-5)
// ---------------------------------------------------------------------------

template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta) {
    auto& t = ag_detail::same_tape(x, gamma);
    ag_detail::same_tape(gamma, beta);
    const Shape& xs = x.val().shape;
    if (xs.empty()) throw ConfigError("layer_norm: rank-0 input");
    const std::int64_t c = xs.back();
    if (c < 1 || gamma.val().numel() != c || beta.val().numel() != c)
        throw ConfigError("layer_norm: gamma/beta must match channel count");
    const std::int64_t rows = x.val().numel() / c;
    constexpr S kEps = static_cast<S>(1e-5);

    Tensor<S> out = Tensor<S>::zeros(xs);
    auto means = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
    auto istds = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
    kern::layer_norm_rows_auto<S>(x.val().ptr(), gamma.val().ptr(), beta.val().ptr(), out.ptr(),
                                  rows, c, kEps, means->data(), istds->data());
    const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "layer_norm");
    if (rg)
        t.record([x = x.id, g = gamma.id, b = beta.id, y = y.id, rows, c, means,
                  istds](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            const Tensor<S>& xv = tp.val(x);
            const Tensor<S>& gv = tp.val(g);
            for (std::int64_t r = 0; r < rows; ++r) {
                const S mean = (*means)[static_cast<std::size_t>(r)];
                const S istd = (*istds)[static_cast<std::size_t>(r)];
                const S* xr = xv.ptr() + r * c;
                const S* gyr = gy.ptr() + r * c;
                if (tp.wants_grad(g)) {
                    Tensor<S>& gg = tp.grad_mut(g);
                    for (std::int64_t j = 0; j < c; ++j)
                        gg[j] += gyr[j] * (xr[j] - mean) * istd;
                }
                if (tp.wants_grad(b)) {
                    Tensor<S>& gb = tp.grad_mut(b);
                    for (std::int64_t j = 0; j < c; ++j) gb[j] += gyr[j];
                }
                if (tp.wants_grad(x)) {
                    S sum_dxhat = 0, sum_dxhat_xhat = 0;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const S xhat = (xr[j] - mean) * istd;
                        const S dxhat = gyr[j] * gv[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    const S inv_c = S(1) / static_cast<S>(c);
                    Tensor<S>& gx = tp.grad_mut(x);
                    for (std::int64_t j = 0; j < c; ++j) {
                        const S xhat = (xr[j] - mean) * istd;
                        const S dxhat = gyr[j] * gv[j];
                        gx[r * c + j] +=
                            istd * (dxhat - inv_c * sum_dxhat - xhat * inv_c * sum_dxhat_xhat);
                    }
                }
            }
        });
    return y;
}

// ---------------------------------------------------------------------------
// masked softmax over the last dimension; masked entries are exact zeros
// ---------------------------------------------------------------------------

template <typename S>
Var<S> masked_softmax_lastdim(Var<S> x, std::shared_ptr<const Mask> mask) {
    Tape<S>& t = *x.tape;
    const Shape& xs = x.val().shape;
    if (xs.size() < 1) throw ConfigError("masked_softmax: rank-0 input");
    const std::int64_t n = xs.back();
    const std::int64_t rows = x.val().numel() / n;
    if (!mask || mask->rows != rows || mask->cols != n)
        throw ConfigError("masked_softmax: mask shape mismatch");
    Tensor<S> out = Tensor<S>::zeros(xs);
    kern::masked_softmax_rows_auto<S>(x.val().ptr(), mask->v.data(), out.ptr(), rows, n);
    const bool rg = x.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "masked_softmax");
    if (rg)
        t.record([x = x.id, y = y.id, rows, n](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            const Tensor<S>& yv = tp.val(y);
            Tensor<S>& gx = tp.grad_mut(x);
            for (std::int64_t r = 0; r < rows; ++r) {
                const S* yr = yv.ptr() + r * n;
                const S* gyr = gy.ptr() + r * n;
                S dot = 0;
                for (std::int64_t j = 0; j < n; ++j) dot += yr[j] * gyr[j];
                for (std::int64_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gyr[j] - dot);
            }
        });
    return y;
}

// ---------------------------------------------------------------------------
// fused masked scaled-dot-product attention: softmax(Q K^T / sqrt(hd)) V.
// Stores only the probability matrix for the backward pass.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> masked_attention(Var<S> q, Var<S> k, Var<S> v, std::shared_ptr<const Mask> mask) {
    auto& t = ag_detail::same_tape(q, k);
    ag_detail::same_tape(k, v);
    if (q.val().shape.size() != 2 || k.val().shape != q.val().shape || v.val().shape != q.val().shape)
        throw ConfigError("masked_attention: q, k, v must share shape [S, hd]");
    const std::int64_t s = q.val().dim(0), hd = q.val().dim(1);
    if (!mask || mask->rows != s || mask->cols != s)
        throw ConfigError("masked_attention: mask must be [S, S]");
    const S sc = S(1) / std::sqrt(static_cast<S>(hd));

    auto probs = std::make_shared<Tensor<S>>(Tensor<S>::zeros({s, s}));
    {
        Tensor<S> scores = Tensor<S>::zeros({s, s});
        kern::gemm_auto<S>(false, true, s, s, hd, q.val().ptr(), k.val().ptr(), scores.ptr(), false);
        for (std::int64_t i = 0; i < scores.numel(); ++i) scores[i] *= sc;
        kern::masked_softmax_rows_auto<S>(scores.ptr(), mask->v.data(), probs->ptr(), s, s);
    }
    Tensor<S> out = Tensor<S>::zeros({s, hd});
    kern::gemm_auto<S>(false, false, s, hd, s, probs->ptr(), v.val().ptr(), out.ptr(), false);

    const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "masked_attention");
    if (rg)
        t.record([q = q.id, k = k.id, v = v.id, y = y.id, s, hd, sc, probs](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            if (tp.wants_grad(v)) {
                // dV += P^T dY
                kern::gemm_auto<S>(true, false, s, hd, s, probs->ptr(), gy.ptr(),
                                   tp.grad_mut(v).ptr(), true);
            }
            if (tp.wants_grad(q) || tp.wants_grad(k)) {
                // dP = dY V^T; dS = sc * P o (dP - rowsum(P o dP))
                Tensor<S> ds = Tensor<S>::zeros({s, s});
                kern::gemm_auto<S>(false, true, s, s, hd, gy.ptr(), tp.val(v).ptr(), ds.ptr(),
                                   false);
                for (std::int64_t r = 0; r < s; ++r) {
                    const S* pr = probs->ptr() + r * s;
                    S* dr = ds.ptr() + r * s;
                    S dot = 0;
                    for (std::int64_t j = 0; j < s; ++j) dot += pr[j] * dr[j];
                    for (std::int64_t j = 0; j < s; ++j) dr[j] = sc * pr[j] * (dr[j] - dot);
                }
                if (tp.wants_grad(q))
                    kern::gemm_auto<S>(false, false, s, hd, s, ds.ptr(), tp.val(k).ptr(),
                                       tp.grad_mut(q).ptr(), true);
                if (tp.wants_grad(k))
                    kern::gemm_auto<S>(true, false, s, hd, s, ds.ptr(), tp.val(q).ptr(),
                                       tp.grad_mut(k).ptr(), true);
            }
        });
    return y;
}

// ---------------------------------------------------------------------------
// spatial pooling over tokens laid out frame-major [T*H*W, c]
// ---------------------------------------------------------------------------

template <typename S>
Var<S> avg_pool_tokens(Var<S> x, Grid3 grid, int r) {
    Tape<S>& t = *x.tape;
    if (r < 1) throw ConfigError("avg_pool: r must be >= 1");
    if (grid.height % r != 0 || grid.width % r != 0)
        throw ConfigError("avg_pool: extents not divisible by r");
    if (x.val().shape.size() != 2 || x.val().dim(0) != grid.tokens())
        throw ConfigError("avg_pool: token count does not match grid");
    const std::int64_t c = x.val().dim(1);
    const Grid3 pg{grid.t_frames, grid.height / r, grid.width / r};
    const std::int64_t r2 = static_cast<std::int64_t>(r) * r;
    const S inv = S(1) / static_cast<S>(r2);

    Tensor<S> out = Tensor<S>::zeros({pg.tokens(), c});
    const S* xp = x.val().ptr();
    for (std::int64_t of = 0; of < pg.tokens(); ++of) {
        const TokenCoord oc = coord_of(pg, of);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S sum = kern::pairwise_sum<S>(0, r2, [&](std::int64_t bi) {
                const TokenCoord ic{oc.t, oc.i * r + static_cast<int>(bi / r),
                                    oc.j * r + static_cast<int>(bi % r)};
                return xp[flat_of(grid, ic) * c + ch];
            });
            out[of * c + ch] = sum * inv;
        }
    }
    const bool rg = x.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "avg_pool");
    if (rg)
        t.record([x = x.id, y = y.id, grid, pg, r, c, inv](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            Tensor<S>& gx = tp.grad_mut(x);
            for (std::int64_t inf = 0; inf < grid.tokens(); ++inf) {
                const TokenCoord ic = coord_of(grid, inf);
                const TokenCoord oc{ic.t, ic.i / r, ic.j / r};
                const std::int64_t of = flat_of(pg, oc);
                for (std::int64_t ch = 0; ch < c; ++ch) gx[inf * c + ch] += gy[of * c + ch] * inv;
            }
        });
    return y;
}

// pooled_grid describes the input; output covers (T, H*r, W*r)
template <typename S>
Var<S> upsample_tokens(Var<S> x, Grid3 pooled_grid, int r) {
    Tape<S>& t = *x.tape;
    if (r < 1) throw ConfigError("upsample: r must be >= 1");
    if (x.val().shape.size() != 2 || x.val().dim(0) != pooled_grid.tokens())
        throw ConfigError("upsample: token count does not match grid");
    const std::int64_t c = x.val().dim(1);
    const Grid3 fg{pooled_grid.t_frames, pooled_grid.height * r, pooled_grid.width * r};

    Tensor<S> out = Tensor<S>::zeros({fg.tokens(), c});
    for (std::int64_t of = 0; of < fg.tokens(); ++of) {
        const TokenCoord oc = coord_of(fg, of);
        const std::int64_t inf = flat_of(pooled_grid, TokenCoord{oc.t, oc.i / r, oc.j / r});
        for (std::int64_t ch = 0; ch < c; ++ch) out[of * c + ch] = x.val()[inf * c + ch];
    }
    const bool rg = x.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "upsample");
    if (rg)
        t.record([x = x.id, y = y.id, pooled_grid, fg, r, c](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            Tensor<S>& gx = tp.grad_mut(x);
            for (std::int64_t of = 0; of < fg.tokens(); ++of) {
                const TokenCoord oc = coord_of(fg, of);
                const std::int64_t inf = flat_of(pooled_grid, TokenCoord{oc.t, oc.i / r, oc.j / r});
                for (std::int64_t ch = 0; ch < c; ++ch) gx[inf * c + ch] += gy[of * c + ch];
            }
        });
    return y;
}

// x: [T*H*W, c], g: [T]; multiplies every token of frame t by g[t].
template <typename S>
Var<S> mul_frame_scalar(Var<S> x, Var<S> g, Grid3 grid) {
    auto& t = ag_detail::same_tape(x, g);
    if (x.val().shape.size() != 2 || x.val().dim(0) != grid.tokens())
        throw ConfigError("mul_frame_scalar: token count does not match grid");
    if (g.val().numel() != grid.t_frames)
        throw ConfigError("mul_frame_scalar: gate length must equal frame count");
    const std::int64_t c = x.val().dim(1);
    const std::int64_t per_frame = static_cast<std::int64_t>(grid.height) * grid.width;

    Tensor<S> out = x.val();
    for (std::int64_t row = 0; row < out.dim(0); ++row) {
        const S gv = g.val()[row / per_frame];
        for (std::int64_t ch = 0; ch < c; ++ch) out[row * c + ch] *= gv;
    }
    const bool rg = x.requires_grad() || g.requires_grad();
    Var<S> y = ag_detail::emit(t, std::move(out), rg, "mul_frame_scalar");
    if (rg)
        t.record([x = x.id, g = g.id, y = y.id, per_frame, c](Tape<S>& tp) {
            const Tensor<S>& gy = tp.grad(y);
            const std::int64_t rows = tp.val(x).dim(0);
            if (tp.wants_grad(x)) {
                Tensor<S>& gx = tp.grad_mut(x);
                const Tensor<S>& gv = tp.val(g);
                for (std::int64_t row = 0; row < rows; ++row) {
                    const S gg = gv[row / per_frame];
                    for (std::int64_t ch = 0; ch < c; ++ch) gx[row * c + ch] += gy[row * c + ch] * gg;
                }
            }
            if (tp.wants_grad(g)) {
                Tensor<S>& ggrad = tp.grad_mut(g);
                const Tensor<S>& xv = tp.val(x);
                for (std::int64_t row = 0; row < rows; ++row) {
                    S acc = 0;
                    for (std::int64_t ch = 0; ch < c; ++ch) acc += gy[row * c + ch] * xv[row * c + ch];
                    ggrad[row / per_frame] += acc;
                }
            }
        });
    return y;
}

// ---------------------------------------------------------------------------
// central finite differences, the independent gradient oracle
// ---------------------------------------------------------------------------

template <typename S, typename F>
Tensor<S> finite_diff_grad(F&& f, Tensor<S> x, S eps) {
    if (!(eps > S(0))) throw ConfigError("finite_diff_grad: eps must be positive");
    Tensor<S> g = Tensor<S>::zeros(x.shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const S orig = x[i];
        x[i] = orig + eps;
        const S fp = f(static_cast<const Tensor<S>&>(x));
        x[i] = orig - eps;
        const S fm = f(static_cast<const Tensor<S>&>(x));
        x[i] = orig;
        g[i] = (fp - fm) / (2 * eps);
    }
    return g;
}

}  // namespace msc
