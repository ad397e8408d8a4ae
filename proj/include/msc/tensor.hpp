#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "msc/common.hpp"
#include "msc/rng.hpp"

namespace msc {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (std::int64_t e : s) {
        if (e < 0) throw ConfigError("tensor: negative extent");
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major n-d array. Immutable once written by its producing op.
template <typename S>
struct Tensor {
    Shape shape;
    std::vector<S> data;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ConfigError("tensor: shape " + shape_str(shape) + " does not match buffer size " +
                              std::to_string(data.size()));
    }

    static Tensor zeros(Shape sh) {
        const auto n = shape_numel(sh);
        return Tensor(std::move(sh), std::vector<S>(static_cast<std::size_t>(n), S(0)));
    }
    static Tensor full(Shape sh, S v) {
        const auto n = shape_numel(sh);
        return Tensor(std::move(sh), std::vector<S>(static_cast<std::size_t>(n), v));
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }
    S& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const S& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
};

template <typename S>
void ensure_finite(const Tensor<S>& t, const char* where) {
    if (!finite_checks_enabled()) return;
    for (const S v : t.data) {
        if (!std::isfinite(v))
            throw NumericError(std::string(where) + ": non-finite value in output");
    }
}

// Deterministic standard-normal fill keyed by (key, element index).
template <typename S>
Tensor<S> gaussian_tensor(Shape sh, std::uint64_t key) {
    Tensor<S> t = Tensor<S>::zeros(std::move(sh));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<S>(rng::gaussian(key, static_cast<std::uint64_t>(i)));
    return t;
}

template <typename S>
Tensor<S> uniform_tensor(Shape sh, std::uint64_t key, S lo, S hi) {
    Tensor<S> t = Tensor<S>::zeros(std::move(sh));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = lo + static_cast<S>(rng::u01(key, static_cast<std::uint64_t>(i))) * (hi - lo);
    return t;
}

}  // namespace msc
