#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>

#include "msc/common.hpp"
#include "msc/parallel.hpp"

// Data-parallel compute kernels. Each kernel comes in a serial reference
// variant and an OpenMP variant that parallelizes over independent output
// elements only; the per-element accumulation order is identical in both,
// so results are bit-equal for any thread count. The *_auto entry points
// dispatch on msc::par::enabled() and problem size.

namespace msc::kern {

// ---------------------------------------------------------------------------
// gemm: c[m,n] (+)= op(a) * op(b), reduction over k in ascending order
// a is [m,k] (or [k,m] when ta), b is [k,n] (or [n,k] when tb)
// ---------------------------------------------------------------------------

template <typename S>
inline void gemm_row(bool ta, bool tb, std::int64_t i, std::int64_t n, std::int64_t k,
                     const S* a, const S* b, S* c, std::int64_t m) {
    S* crow = c + i * n;
    if (!ta && !tb) {
        const S* arow = a + i * k;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const S av = arow[kk];
            const S* brow = b + kk * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    } else if (ta && !tb) {
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const S av = a[kk * m + i];
            const S* brow = b + kk * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    } else if (!ta && tb) {
        const S* arow = a + i * k;
        for (std::int64_t j = 0; j < n; ++j) {
            const S* brow = b + j * k;
            S dot = 0;
            for (std::int64_t kk = 0; kk < k; ++kk) dot += arow[kk] * brow[kk];
            crow[j] += dot;
        }
    } else {
        for (std::int64_t j = 0; j < n; ++j) {
            const S* brow = b + j * k;
            S dot = 0;
            for (std::int64_t kk = 0; kk < k; ++kk) dot += a[kk * m + i] * brow[kk];
            crow[j] += dot;
        }
    }
}

template <typename S>
void gemm_serial(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
                 const S* a, const S* b, S* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, S(0));
    for (std::int64_t i = 0; i < m; ++i) gemm_row(ta, tb, i, n, k, a, b, c, m);
}

template <typename S>
void gemm_omp(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
              const S* a, const S* b, S* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, S(0));
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) gemm_row(ta, tb, i, n, k, a, b, c, m);
}

template <typename S>
void gemm_auto(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
               const S* a, const S* b, S* c, bool accumulate) {
    if (par::enabled() && m > 1 && m * n * k >= par::kGrain)
        gemm_omp(ta, tb, m, n, k, a, b, c, accumulate);
    else
        gemm_serial(ta, tb, m, n, k, a, b, c, accumulate);
}

// ---------------------------------------------------------------------------
// Row-wise softmax over allowed entries. Masked entries are written as an
// exact 0 and never touched by exp/sum, so they are zero bitwise.
// ---------------------------------------------------------------------------

template <typename S>
inline bool softmax_row(const S* x, const std::uint8_t* mask, S* y, std::int64_t n) {
    S mx = -std::numeric_limits<S>::infinity();
    bool any = false;
    for (std::int64_t j = 0; j < n; ++j) {
        if (mask[j]) {
            any = true;
            if (x[j] > mx) mx = x[j];
        }
    }
    if (!any) return false;
    S sum = 0;
    for (std::int64_t j = 0; j < n; ++j) {
        if (mask[j]) {
            const S e = std::exp(x[j] - mx);
            y[j] = e;
            sum += e;
        } else {
            y[j] = S(0);
        }
    }
    for (std::int64_t j = 0; j < n; ++j) {
        if (mask[j]) y[j] /= sum;
    }
    return true;
}

template <typename S>
void masked_softmax_rows_serial(const S* x, const std::uint8_t* mask, S* y,
                                std::int64_t rows, std::int64_t n) {
    for (std::int64_t r = 0; r < rows; ++r) {
        if (!softmax_row(x + r * n, mask + r * n, y + r * n, n))
            throw NumericError("masked_softmax: fully-masked row " + std::to_string(r));
    }
}

template <typename S>
void masked_softmax_rows_omp(const S* x, const std::uint8_t* mask, S* y,
                             std::int64_t rows, std::int64_t n) {
    std::atomic<std::int64_t> bad{-1};
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
        if (!softmax_row(x + r * n, mask + r * n, y + r * n, n)) bad.store(r);
    }
    const std::int64_t b = bad.load();
    if (b >= 0) throw NumericError("masked_softmax: fully-masked row " + std::to_string(b));
}

template <typename S>
void masked_softmax_rows_auto(const S* x, const std::uint8_t* mask, S* y,
                              std::int64_t rows, std::int64_t n) {
    if (par::enabled() && rows > 1 && rows * n >= par::kGrain)
        masked_softmax_rows_omp(x, mask, y, rows, n);
    else
        masked_softmax_rows_serial(x, mask, y, rows, n);
}

// ---------------------------------------------------------------------------
// Per-row layer normalization: y = (x - mean) / sqrt(var + eps) * gamma + beta.
// mean_out/istd_out (optional, length rows) are saved for the backward pass.
// ---------------------------------------------------------------------------

template <typename S>
inline void layer_norm_row(const S* x, const S* gamma, const S* beta, S* y, std::int64_t c,
                           S eps, S* mean_out, S* istd_out) {
    S mean = 0;
    for (std::int64_t j = 0; j < c; ++j) mean += x[j];
    mean /= static_cast<S>(c);
    S var = 0;
    for (std::int64_t j = 0; j < c; ++j) {
        const S d = x[j] - mean;
        var += d * d;
    }
    var /= static_cast<S>(c);
    const S istd = S(1) / std::sqrt(var + eps);
    for (std::int64_t j = 0; j < c; ++j) y[j] = (x[j] - mean) * istd * gamma[j] + beta[j];
    if (mean_out) *mean_out = mean;
    if (istd_out) *istd_out = istd;
}

template <typename S>
void layer_norm_rows_serial(const S* x, const S* gamma, const S* beta, S* y,
                            std::int64_t rows, std::int64_t c, S eps, S* means, S* istds) {
    for (std::int64_t r = 0; r < rows; ++r)
        layer_norm_row(x + r * c, gamma, beta, y + r * c, c, eps,
                       means ? means + r : nullptr, istds ? istds + r : nullptr);
}

template <typename S>
void layer_norm_rows_omp(const S* x, const S* gamma, const S* beta, S* y,
                         std::int64_t rows, std::int64_t c, S eps, S* means, S* istds) {
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r)
        layer_norm_row(x + r * c, gamma, beta, y + r * c, c, eps,
                       means ? means + r : nullptr, istds ? istds + r : nullptr);
}

template <typename S>
void layer_norm_rows_auto(const S* x, const S* gamma, const S* beta, S* y,
                          std::int64_t rows, std::int64_t c, S eps, S* means, S* istds) {
    if (par::enabled() && rows > 1 && rows * c >= par::kGrain)
        layer_norm_rows_omp(x, gamma, beta, y, rows, c, eps, means, istds);
    else
        layer_norm_rows_serial(x, gamma, beta, y, rows, c, eps, means, istds);
}

// ---------------------------------------------------------------------------
// Balanced pairwise summation. For power-of-two lengths of equal values the
// sum is exact, which makes avg_pool(upsample(x)) an elementwise identity.
// ---------------------------------------------------------------------------

template <typename S, typename F>
S pairwise_sum(std::int64_t lo, std::int64_t len, F&& value_at) {
    if (len == 1) return value_at(lo);
    const std::int64_t half = len / 2;
    return pairwise_sum<S>(lo, half, value_at) + pairwise_sum<S>(lo + half, len - half, value_at);
}

}  // namespace msc::kern
