#pragma once

#include <cstdint>
#include <vector>

#include "msc/common.hpp"

namespace msc {

struct Grid3 {
    int t_frames = 1;
    int height = 1;
    int width = 1;

    std::int64_t tokens() const {
        return static_cast<std::int64_t>(t_frames) * height * width;
    }
    bool operator==(const Grid3&) const = default;
};

// 0-based token coordinate; flat index is frame-major row-major.
struct TokenCoord {
    int t = 0;
    int i = 0;
    int j = 0;
    bool operator==(const TokenCoord&) const = default;
};

inline std::int64_t flat_of(const Grid3& g, const TokenCoord& c) {
    return (static_cast<std::int64_t>(c.t) * g.height + c.i) * g.width + c.j;
}

inline TokenCoord coord_of(const Grid3& g, std::int64_t flat) {
    TokenCoord c;
    c.j = static_cast<int>(flat % g.width);
    flat /= g.width;
    c.i = static_cast<int>(flat % g.height);
    c.t = static_cast<int>(flat / g.height);
    return c;
}

// Dense boolean attention mask, mask[q, k] row-major.
struct Mask {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<std::uint8_t> v;

    static Mask zeros(std::int64_t r, std::int64_t c) {
        Mask m;
        m.rows = r;
        m.cols = c;
        m.v.assign(static_cast<std::size_t>(r * c), 0);
        return m;
    }
    static Mask ones(std::int64_t r, std::int64_t c) {
        Mask m = zeros(r, c);
        std::fill(m.v.begin(), m.v.end(), std::uint8_t(1));
        return m;
    }
    bool at(std::int64_t q, std::int64_t k) const { return v[static_cast<std::size_t>(q * cols + k)] != 0; }
    void set(std::int64_t q, std::int64_t k, bool b) { v[static_cast<std::size_t>(q * cols + k)] = b ? 1 : 0; }
    const std::uint8_t* row(std::int64_t q) const { return v.data() + q * cols; }
};

std::uint64_t count_true(const Mask& m);

// Declarative description of one branch's allowed (query, key) pairs.
//
// HighRes: clamped w x w spatial sliding window (shifted to stay in bounds,
// neighborhood-attention style) over the v most recent frames including the
// current one: t - v < t' <= t.
// LowRes: full spatial extent, frames strided relative to the query frame:
// t' <= t and (t - t') % d == 0.
//
// `causal` is always true in the model; the non-causal variant exists only
// as the negative-control fixture for the causality audit.
struct AttentionGeometry {
    enum class Kind { HighRes, LowRes };

    Grid3 grid;
    Kind kind = Kind::HighRes;
    int w = 1;  // spatial window (HighRes)
    int v = 1;  // temporal window in frames (HighRes)
    int d = 1;  // temporal stride (LowRes)
    bool causal = true;

    static AttentionGeometry high_res(Grid3 grid, int w, int v, bool causal = true);
    static AttentionGeometry low_res(Grid3 grid, int d, bool causal = true);
};

bool allowed(const AttentionGeometry& geom, const TokenCoord& q, const TokenCoord& k);

// Materializes the dense mask; errors when tokens() exceeds `cap` per side.
Mask build_dense_mask(const AttentionGeometry& geom, std::int64_t cap = 65536);

// Number of allowed (query, key) pairs, by direct enumeration.
std::uint64_t pair_count(const AttentionGeometry& geom);

// Frames any query in q_frame may attend to, ascending.
std::vector<int> frame_reach(const AttentionGeometry& geom, int q_frame);

}  // namespace msc
