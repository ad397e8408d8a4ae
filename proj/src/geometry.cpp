#include "msc/geometry.hpp"

#include <algorithm>
#include <string>

namespace msc {

namespace {

void check_coord(const Grid3& g, const TokenCoord& c, const char* which) {
    if (c.t < 0 || c.t >= g.t_frames || c.i < 0 || c.i >= g.height || c.j < 0 || c.j >= g.width)
        throw ConfigError(std::string("geometry: ") + which + " coordinate outside grid");
}

// Start of the clamped window of size w over an extent of size n, centered at
// position p and shifted so it never leaves [0, n). Covers the whole extent
// when n < w. The query position is always inside its own window.
inline int window_start(int p, int w, int n) {
    const int eff = std::min(w, n);
    int lo = p - (w - 1) / 2;
    lo = std::min(lo, n - eff);
    lo = std::max(lo, 0);
    return lo;
}

inline bool in_window(int qp, int kp, int w, int n) {
    const int lo = window_start(qp, w, n);
    const int eff = std::min(w, n);
    return kp >= lo && kp < lo + eff;
}

bool temporal_allowed(const AttentionGeometry& geom, int qt, int kt) {
    if (geom.causal) {
        if (kt > qt) return false;
        if (geom.kind == AttentionGeometry::Kind::HighRes) return qt - kt < geom.v;
        return (qt - kt) % geom.d == 0;
    }
    // Negative-control fixture: same pattern mirrored in time.
    const int dt = std::abs(qt - kt);
    if (geom.kind == AttentionGeometry::Kind::HighRes) return dt < geom.v;
    return dt % geom.d == 0;
}

}  // namespace

AttentionGeometry AttentionGeometry::high_res(Grid3 grid, int w, int v, bool causal) {
    if (grid.t_frames < 1 || grid.height < 1 || grid.width < 1)
        throw ConfigError("geometry: grid extents must be positive");
    if (w < 1 || v < 1) throw ConfigError("geometry: HighRes requires w >= 1 and v >= 1");
    AttentionGeometry g;
    g.grid = grid;
    g.kind = Kind::HighRes;
    g.w = w;
    g.v = v;
    g.causal = causal;
    return g;
}

AttentionGeometry AttentionGeometry::low_res(Grid3 grid, int d, bool causal) {
    if (grid.t_frames < 1 || grid.height < 1 || grid.width < 1)
        throw ConfigError("geometry: grid extents must be positive");
    if (d < 1) throw ConfigError("geometry: LowRes requires d >= 1");
    AttentionGeometry g;
    g.grid = grid;
    g.kind = Kind::LowRes;
    g.d = d;
    g.causal = causal;
    return g;
}

bool allowed(const AttentionGeometry& geom, const TokenCoord& q, const TokenCoord& k) {
    check_coord(geom.grid, q, "query");
    check_coord(geom.grid, k, "key");
    if (!temporal_allowed(geom, q.t, k.t)) return false;
    if (geom.kind == AttentionGeometry::Kind::LowRes) return true;
    return in_window(q.i, k.i, geom.w, geom.grid.height) &&
           in_window(q.j, k.j, geom.w, geom.grid.width);
}

Mask build_dense_mask(const AttentionGeometry& geom, std::int64_t cap) {
    const std::int64_t s = geom.grid.tokens();
    if (s > cap)
        throw ConfigError("geometry: dense mask side " + std::to_string(s) + " exceeds cap " +
                          std::to_string(cap));
    Mask m = Mask::zeros(s, s);
    for (std::int64_t qf = 0; qf < s; ++qf) {
        const TokenCoord q = coord_of(geom.grid, qf);
        for (std::int64_t kf = 0; kf < s; ++kf) {
            m.set(qf, kf, allowed(geom, q, coord_of(geom.grid, kf)));
        }
    }
    return m;
}

std::uint64_t count_true(const Mask& m) {
    std::uint64_t n = 0;
    for (std::uint8_t b : m.v) n += b ? 1 : 0;
    return n;
}

std::uint64_t pair_count(const AttentionGeometry& geom) {
    const std::int64_t s = geom.grid.tokens();
    std::uint64_t n = 0;
    for (std::int64_t qf = 0; qf < s; ++qf) {
        const TokenCoord q = coord_of(geom.grid, qf);
        for (std::int64_t kf = 0; kf < s; ++kf) {
            if (allowed(geom, q, coord_of(geom.grid, kf))) ++n;
        }
    }
    return n;
}

std::vector<int> frame_reach(const AttentionGeometry& geom, int q_frame) {
    if (q_frame < 0 || q_frame >= geom.grid.t_frames)
        throw ConfigError("geometry: q_frame outside grid");
    std::vector<int> out;
    for (int t = 0; t < geom.grid.t_frames; ++t) {
        if (temporal_allowed(geom, q_frame, t)) out.push_back(t);
    }
    return out;
}

}  // namespace msc
