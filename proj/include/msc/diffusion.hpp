#pragma once

#include <memory>
#include <optional>

#include "msc/model.hpp"

namespace msc {

// ---------------------------------------------------------------------------
// discrete variance-preserving schedule, beta linear from 1e-4 to 2e-2
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    int n_steps = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;  // cumulative product of (1 - beta)

    static NoiseSchedule linear(int n) {
        if (n < 1) throw ConfigError("noise schedule: need at least one step");
        NoiseSchedule s;
        s.n_steps = n;
        s.beta.resize(static_cast<std::size_t>(n));
        s.alpha_bar.resize(static_cast<std::size_t>(n));
        constexpr double b0 = 1e-4, b1 = 2e-2;
        double prod = 1.0;
        for (int i = 0; i < n; ++i) {
            const double b = (n == 1) ? b0 : b0 + (b1 - b0) * static_cast<double>(i) / (n - 1);
            s.beta[static_cast<std::size_t>(i)] = b;
            prod *= (1.0 - b);
            s.alpha_bar[static_cast<std::size_t>(i)] = prod;
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// forward process with independent per-frame timesteps
// ---------------------------------------------------------------------------

template <typename S>
struct NoisyVideo {
    Tensor<S> x_t;
    Tensor<S> eps;
    FrameTimesteps ft;
};

// x_t = sqrt(abar_ft) x0 + sqrt(1 - abar_ft) eps, per frame. Noise is keyed
// by (seed, video frame, position), so it does not depend on evaluation
// order. With patch_q > 1 a token frame covers q video frames; ft is indexed
// on the token-frame axis, video frame tau uses ft[tau / frame_group].
template <typename S>
NoisyVideo<S> add_noise_per_frame(const Tensor<S>& x0, const FrameTimesteps& ft,
                                  const NoiseSchedule& sched, std::uint64_t seed,
                                  int frame_group = 1) {
    if (x0.shape.size() != 5) throw ConfigError("add_noise: expected [B,T,H,W,C]");
    const std::int64_t b = x0.dim(0), tt = x0.dim(1);
    const std::int64_t per_frame = x0.dim(2) * x0.dim(3) * x0.dim(4);
    if (frame_group < 1 || tt % frame_group != 0)
        throw ConfigError("add_noise: frame count not divisible by frame group");
    ft.validate(sched.n_steps, static_cast<int>(tt / frame_group));

    NoisyVideo<S> out;
    out.ft = ft;
    out.eps = Tensor<S>::zeros(x0.shape);
    out.x_t = Tensor<S>::zeros(x0.shape);
    for (std::int64_t tau = 0; tau < tt; ++tau) {
        const int step = ft.idx[static_cast<std::size_t>(tau / frame_group)];
        const double ab = sched.alpha_bar[static_cast<std::size_t>(step)];
        const S c_sig = static_cast<S>(std::sqrt(ab));
        const S c_eps = static_cast<S>(std::sqrt(1.0 - ab));
        const std::uint64_t k = rng::key({seed, rng::kNoiseEps, static_cast<std::uint64_t>(tau)});
        for (std::int64_t bi = 0; bi < b; ++bi) {
            const std::int64_t base = (bi * tt + tau) * per_frame;
            for (std::int64_t p = 0; p < per_frame; ++p) {
                const S e = static_cast<S>(
                    rng::gaussian(k, static_cast<std::uint64_t>(bi * per_frame + p)));
                out.eps[base + p] = e;
                out.x_t[base + p] = c_sig * x0[base + p] + c_eps * e;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooled-noise analysis
// ---------------------------------------------------------------------------

// Variance of the r x r block mean of i.i.d. noise with variance sigma2.
inline double pooled_noise_var(double sigma2, int r) {
    if (r < 1) throw ConfigError("pooled_noise_var: r must be >= 1");
    return sigma2 / (static_cast<double>(r) * r);
}

// SNR(pooled) / SNR(original) for signal x0 under i.i.d. noise of variance
// sigma2: signal power is the mean square, pooled noise variance sigma2/r^2.
// Exactly r^2 for locally constant signal; collapses toward 0 when pooling
// cancels the signal (e.g. a +-1 checkerboard).
template <typename S>
double pooled_snr_gain(const Tensor<S>& x0, double sigma2, int r) {
    if (!(sigma2 > 0)) throw ConfigError("pooled_snr_gain: noise variance must be positive");
    if (r < 1) throw ConfigError("pooled_snr_gain: r must be >= 1");
    if (x0.shape.size() != 5) throw ConfigError("pooled_snr_gain: expected [B,T,H,W,C]");
    const std::int64_t hh = x0.dim(2), ww = x0.dim(3), c = x0.dim(4);
    if (hh % r != 0 || ww % r != 0) throw ConfigError("pooled_snr_gain: extents not divisible by r");

    double orig_power = 0;
    for (std::int64_t i = 0; i < x0.numel(); ++i)
        orig_power += static_cast<double>(x0[i]) * x0[i];
    orig_power /= static_cast<double>(x0.numel());
    if (orig_power == 0) throw ConfigError("pooled_snr_gain: zero signal power");

    const std::int64_t frames = x0.dim(0) * x0.dim(1);
    const std::int64_t ho = hh / r, wo = ww / r;
    const std::int64_t r2 = static_cast<std::int64_t>(r) * r;
    double pooled_power = 0;
    for (std::int64_t f = 0; f < frames; ++f) {
        const S* fr = x0.ptr() + f * hh * ww * c;
        for (std::int64_t oi = 0; oi < ho; ++oi)
            for (std::int64_t oj = 0; oj < wo; ++oj)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double m =
                        static_cast<double>(kern::pairwise_sum<S>(0, r2, [&](std::int64_t bi) {
                            return fr[((oi * r + bi / r) * ww + oj * r + bi % r) * c + ch];
                        })) / static_cast<double>(r2);
                    pooled_power += m * m;
                }
    }
    pooled_power /= static_cast<double>(frames * ho * wo * c);
    return (pooled_power * r2) / orig_power;
}

// ---------------------------------------------------------------------------
// denoising loss (eps prediction, per-frame timesteps sampled uniformly)
// ---------------------------------------------------------------------------

// Mean squared error of a prediction against fixed noise tokens.
template <typename S>
Var<S> eps_mse_loss(Var<S> pred_tokens, const Tensor<S>& eps_tokens) {
    Var<S> d = sub_const(pred_tokens, eps_tokens);
    return mean_all(mul(d, d));
}

template <typename S>
struct LossBuild {
    std::unique_ptr<Tape<S>> tape;
    Var<S> loss;
    std::vector<Var<S>> param_vars;
    FrameTimesteps ft;
};

template <typename S>
FrameTimesteps sample_frame_timesteps(int t_frames, int n_steps, std::uint64_t seed) {
    FrameTimesteps ft;
    ft.idx.resize(static_cast<std::size_t>(t_frames));
    const std::uint64_t k = rng::key({seed, rng::kFrameTimesteps});
    for (int t = 0; t < t_frames; ++t)
        ft.idx[static_cast<std::size_t>(t)] =
            static_cast<int>(rng::uniform_int(k, static_cast<std::uint64_t>(t), n_steps));
    return ft;
}

// Builds the full training graph for one step: per-frame timesteps are
// sampled i.i.d. uniform over [0, N), noise added per frame, and the loss is
// the elementwise MSE between predicted and true noise. Deterministic in
// (params, x0, seed). Batch entries share parameters; losses are averaged.
template <typename S>
LossBuild<S> build_denoising_loss(const ModelConfig& cfg, const ModelParams<S>& params,
                                  const Tensor<S>& x0, const NoiseSchedule& sched,
                                  std::uint64_t seed, const ModelWorkspace<S>& ws,
                                  std::optional<FrameTimesteps> ft_override = {}) {
    if (x0.shape.size() != 5) throw ConfigError("denoising_loss: expected [B,T,H,W,C]");
    const std::int64_t b = x0.dim(0);
    LossBuild<S> lb;
    lb.ft = ft_override ? *ft_override
                        : sample_frame_timesteps(ws.grid.t_frames, sched.n_steps, seed);
    NoisyVideo<S> nv = add_noise_per_frame(x0, lb.ft, sched, seed, cfg.patch_q);

    Tensor<S> xt_tokens = patchify(nv.x_t, cfg.patch_p, cfg.patch_q);
    Tensor<S> eps_tokens = patchify(nv.eps, cfg.patch_p, cfg.patch_q);
    const std::int64_t s = ws.grid.tokens(), din = cfg.token_dim();

    lb.tape = std::make_unique<Tape<S>>();
    lb.param_vars = push_params(*lb.tape, params, true);
    Var<S> total{};
    for (std::int64_t bi = 0; bi < b; ++bi) {
        Tensor<S> xt = Tensor<S>::zeros({s, din});
        Tensor<S> et = Tensor<S>::zeros({s, din});
        std::copy(xt_tokens.data.begin() + bi * s * din,
                  xt_tokens.data.begin() + (bi + 1) * s * din, xt.data.begin());
        std::copy(eps_tokens.data.begin() + bi * s * din,
                  eps_tokens.data.begin() + (bi + 1) * s * din, et.data.begin());
        Var<S> pred = model_forward_tokens(*lb.tape, xt, lb.ft, cfg, params.layout,
                                           lb.param_vars, ws);
        Var<S> l = eps_mse_loss(pred, et);
        total = (bi == 0) ? l : add(total, l);
    }
    lb.loss = (b > 1) ? scale(total, S(1) / static_cast<S>(b)) : total;
    return lb;
}

template <typename S>
double denoising_loss(const ModelConfig& cfg, const ModelParams<S>& params, const Tensor<S>& x0,
                      const NoiseSchedule& sched, std::uint64_t seed) {
    auto ws = ModelWorkspace<S>::build(cfg);
    auto lb = build_denoising_loss(cfg, params, x0, sched, seed, ws);
    return static_cast<double>(lb.loss.val()[0]);
}

// ---------------------------------------------------------------------------
// autoregressive sampler
// ---------------------------------------------------------------------------

// Generates token frames left to right. Frames already emitted are held at
// their final clean values and are never rewritten; the model input while
// denoising frame n contains only frames 0..n, so later frames cannot be
// read. Frame n runs the full reverse chain t = N-1..0 with per-frame
// timesteps [0, ..., 0, t] and the DDPM ancestral update (sigma_t = sqrt(beta_t)).
template <typename S>
Tensor<S> sample_autoregressive(const ModelConfig& cfg, const ModelParams<S>& params,
                                const NoiseSchedule& sched, int n_frames,
                                const std::optional<Tensor<S>>& context, std::uint64_t seed) {
    cfg.validate();
    if (n_frames < 1) throw ConfigError("sample: n_frames must be >= 1");
    const int q = cfg.patch_q;
    const std::int64_t hh = cfg.height, ww = cfg.width, c = cfg.channels;
    const std::int64_t per_tframe = static_cast<std::int64_t>(q) * hh * ww * c;

    Tensor<S> video = Tensor<S>::zeros({1, static_cast<std::int64_t>(n_frames) * q, hh, ww, c});
    int ctx_frames = 0;
    if (context) {
        if (context->shape.size() != 5 || context->dim(0) != 1 || context->dim(2) != hh ||
            context->dim(3) != ww || context->dim(4) != c)
            throw ConfigError("sample: context shape mismatch");
        if (context->dim(1) % q != 0)
            throw ConfigError("sample: context frames not divisible by patch_q");
        ctx_frames = static_cast<int>(context->dim(1) / q);
        if (ctx_frames > n_frames)
            throw ConfigError("sample: context longer than requested frame count");
        std::copy(context->data.begin(), context->data.end(), video.data.begin());
    }

    for (int n = ctx_frames; n < n_frames; ++n) {
        const Grid3 prefix_grid{n + 1, static_cast<int>(hh) / cfg.patch_p,
                                static_cast<int>(ww) / cfg.patch_p};
        auto ws = ModelWorkspace<S>::build(cfg, prefix_grid);

        // frame n starts as pure noise
        Tensor<S> x = Tensor<S>::zeros({per_tframe});
        {
            const std::uint64_t k =
                rng::key({seed, rng::kSamplerInit, static_cast<std::uint64_t>(n)});
            for (std::int64_t i = 0; i < per_tframe; ++i)
                x[i] = static_cast<S>(rng::gaussian(k, static_cast<std::uint64_t>(i)));
        }

        Tensor<S> input = Tensor<S>::zeros({1, static_cast<std::int64_t>(n + 1) * q, hh, ww, c});
        std::copy(video.data.begin(), video.data.begin() + static_cast<std::int64_t>(n) * per_tframe,
                  input.data.begin());

        FrameTimesteps ft;
        ft.idx.assign(static_cast<std::size_t>(n + 1), 0);
        for (int t = sched.n_steps - 1; t >= 0; --t) {
            ft.idx[static_cast<std::size_t>(n)] = t;
            std::copy(x.data.begin(), x.data.end(),
                      input.data.begin() + static_cast<std::int64_t>(n) * per_tframe);
            Tensor<S> eps = model_forward(cfg, params, ft, input, ws);
            const double bt = sched.beta[static_cast<std::size_t>(t)];
            const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
            const double inv_sqrt_a = 1.0 / std::sqrt(1.0 - bt);
            const double eps_coef = bt / std::sqrt(1.0 - ab);
            const double sigma = std::sqrt(bt);
            const std::uint64_t k = rng::key({seed, rng::kSamplerStep,
                                              static_cast<std::uint64_t>(n),
                                              static_cast<std::uint64_t>(t)});
            const S* ep = eps.ptr() + static_cast<std::int64_t>(n) * per_tframe;
            for (std::int64_t i = 0; i < per_tframe; ++i) {
                double xi = inv_sqrt_a * (static_cast<double>(x[i]) - eps_coef * ep[i]);
                if (t > 0) xi += sigma * rng::gaussian(k, static_cast<std::uint64_t>(i));
                x[i] = static_cast<S>(xi);
            }
        }
        std::copy(x.data.begin(), x.data.end(),
                  video.data.begin() + static_cast<std::int64_t>(n) * per_tframe);
    }
    return video;
}

}  // namespace msc
