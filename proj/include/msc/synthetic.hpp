#pragma once

#include "msc/rng.hpp"
#include "msc/tensor.hpp"

namespace msc {

// Synthetic scene: a square translating at its own velocity over a panning
// background gradient, both wrapping at the borders. Exercises local object
// motion and global scene motion. Deterministic given the seed (which picks
// the square's start position).
struct MotionConfig {
    int square_side = 4;
    int square_vx = 1, square_vy = 0;
    int pan_vx = 0, pan_vy = 1;
    double square_amp = 0.8;
    double bg_amp = 1.0;
};

template <typename S>
Tensor<S> gen_synthetic_video(int t_frames, int height, int width, int channels,
                              const MotionConfig& m, std::uint64_t seed) {
    if (t_frames < 1 || height < 1 || width < 1 || channels < 1)
        throw ConfigError("synthetic: extents must be positive");
    if (m.square_side < 0 || m.square_side > height || m.square_side > width)
        throw ConfigError("synthetic: square does not fit the grid");

    const std::uint64_t k = rng::key({seed, rng::kData});
    const int si = static_cast<int>(rng::uniform_int(k, 0, height));
    const int sj = static_cast<int>(rng::uniform_int(k, 1, width));

    auto wrap = [](int a, int n) { return ((a % n) + n) % n; };
    constexpr double kTau = 6.283185307179586477;

    Tensor<S> v = Tensor<S>::zeros({1, t_frames, height, width, channels});
    std::int64_t p = 0;
    for (int t = 0; t < t_frames; ++t) {
        const int qi = wrap(si + m.square_vy * t, height);
        const int qj = wrap(sj + m.square_vx * t, width);
        for (int i = 0; i < height; ++i)
            for (int j = 0; j < width; ++j) {
                const int u = wrap(i + m.pan_vy * t, height);
                const int w = wrap(j + m.pan_vx * t, width);
                const bool in_sq = wrap(i - qi, height) < m.square_side &&
                                   wrap(j - qj, width) < m.square_side;
                for (int c = 0; c < channels; ++c) {
                    const double phase = kTau * c / channels;
                    double val = m.bg_amp *
                                 std::sin(kTau * (static_cast<double>(u) / height +
                                                  static_cast<double>(w) / width) + phase);
                    if (in_sq) val += m.square_amp * (c % 2 == 0 ? 1.0 : -1.0);
                    v[p++] = static_cast<S>(val);
                }
            }
    }
    return v;
}

}  // namespace msc
