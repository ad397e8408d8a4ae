#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msc/attention.hpp"
#include "msc/autograd.hpp"
#include "msc/geometry.hpp"
#include "msc/rng.hpp"

namespace msc {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct LayerConfig {
    int h = 64;        // hidden width (equal across layers; split h/2 per branch)
    int heads_h = 2;   // High-Res branch heads
    int heads_l = 2;   // Low-Res branch heads
    int w = 3;         // High-Res spatial window
    int v = 2;         // High-Res temporal window (includes current frame)
    int r = 2;         // Low-Res spatial down factor
    int d = 2;         // Low-Res temporal stride
    int ffn_mult = 4;
};

struct ModelConfig {
    int l_layers = 2;
    std::vector<LayerConfig> layers;
    int t_frames = 8, height = 16, width = 16, channels = 4;  // input latent grid
    int patch_p = 2, patch_q = 1;
    int t_embed_dim = 32;
    int diffusion_steps = 50;

    Grid3 token_grid() const {
        return Grid3{t_frames / patch_q, height / patch_p, width / patch_p};
    }
    int token_dim() const { return channels * patch_p * patch_p * patch_q; }
    int hidden() const { return layers.empty() ? 0 : layers[0].h; }

    void validate() const;
};

// Per-frame diffusion timestep indices over the token grid's frame axis.
struct FrameTimesteps {
    std::vector<int> idx;

    void validate(int n_steps, int t_frames) const {
        if (static_cast<int>(idx.size()) != t_frames)
            throw ConfigError("frame timesteps: length " + std::to_string(idx.size()) +
                              " does not match frame count " + std::to_string(t_frames));
        for (int t : idx)
            if (t < 0 || t >= n_steps) throw ConfigError("frame timesteps: index out of range");
    }
};

// Non-decreasing step schedule of down factors: r doubles at evenly spaced
// depth thresholds from base_r to max_r. When a token grid is given, errors
// if max_r would pool an extent below 1.
std::vector<int> r_schedule(int l_total, int base_r, int max_r,
                            std::optional<Grid3> token_grid = {});

inline void ModelConfig::validate() const {
    if (l_layers != static_cast<int>(layers.size()))
        throw ConfigError("config: L does not match layer list length");
    if (t_frames < 1 || height < 1 || width < 1 || channels < 1)
        throw ConfigError("config: grid extents must be positive");
    if (patch_p < 1 || patch_q < 1 || t_frames % patch_q != 0 || height % patch_p != 0 ||
        width % patch_p != 0)
        throw ConfigError("config: grid not divisible by patch size");
    if (t_embed_dim < 2 || t_embed_dim % 2 != 0)
        throw ConfigError("config: t_embed_dim must be even and >= 2");
    if (diffusion_steps < 1) throw ConfigError("config: diffusion_steps must be >= 1");
    const Grid3 tg = token_grid();
    int prev_r = 1;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerConfig& lc = layers[l];
        if (lc.h < 8 || lc.h % 2 != 0) throw ConfigError("config: h must be even and >= 8");
        if (lc.h != layers[0].h) throw ConfigError("config: h must be equal across layers");
        const int hb = lc.h / 2;
        if (lc.heads_h < 1 || hb % lc.heads_h != 0 || lc.heads_l < 1 || hb % lc.heads_l != 0)
            throw ConfigError("config: branch width h/2 must be divisible by head count");
        if (lc.w < 1 || lc.v < 1 || lc.d < 1 || lc.r < 1 || lc.ffn_mult < 1)
            throw ConfigError("config: layer windows/factors must be positive");
        if (tg.height % lc.r != 0 || tg.width % lc.r != 0)
            throw ConfigError("config: token grid not divisible by down factor r at layer " +
                              std::to_string(l));
        if (tg.height / lc.r < 1 || tg.width / lc.r < 1)
            throw ConfigError("config: pooled extent below 1 at layer " + std::to_string(l));
        if (lc.r < prev_r)
            throw ConfigError("config: r schedule must be non-decreasing with depth");
        prev_r = lc.r;
    }
}

// ---------------------------------------------------------------------------
// patchify: [B,T,H,W,C] -> [B,T/q,H/p,W/p,C*p*p*q]; exact inverse
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> patchify(const Tensor<S>& x, int p, int q) {
    if (x.shape.size() != 5) throw ConfigError("patchify: expected [B,T,H,W,C]");
    const std::int64_t b = x.dim(0), tt = x.dim(1), hh = x.dim(2), ww = x.dim(3), c = x.dim(4);
    if (p < 1 || q < 1 || tt % q != 0 || hh % p != 0 || ww % p != 0)
        throw ConfigError("patchify: extents not divisible by patch size");
    const std::int64_t to = tt / q, ho = hh / p, wo = ww / p;
    const std::int64_t dout = c * p * p * q;
    Tensor<S> out = Tensor<S>::zeros({b, to, ho, wo, dout});
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t ot = 0; ot < to; ++ot)
            for (std::int64_t oi = 0; oi < ho; ++oi)
                for (std::int64_t oj = 0; oj < wo; ++oj)
                    for (std::int64_t dt = 0; dt < q; ++dt)
                        for (std::int64_t di = 0; di < p; ++di)
                            for (std::int64_t dj = 0; dj < p; ++dj)
                                for (std::int64_t ch = 0; ch < c; ++ch) {
                                    const std::int64_t src =
                                        (((bi * tt + ot * q + dt) * hh + oi * p + di) * ww +
                                         oj * p + dj) * c + ch;
                                    const std::int64_t dch = ((dt * p + di) * p + dj) * c + ch;
                                    out[(((bi * to + ot) * ho + oi) * wo + oj) * dout + dch] =
                                        x[src];
                                }
    return out;
}

template <typename S>
Tensor<S> unpatchify(const Tensor<S>& x, int p, int q, int channels) {
    if (x.shape.size() != 5) throw ConfigError("unpatchify: expected rank-5 input");
    const std::int64_t b = x.dim(0), to = x.dim(1), ho = x.dim(2), wo = x.dim(3), dIn = x.dim(4);
    if (dIn != static_cast<std::int64_t>(channels) * p * p * q)
        throw ConfigError("unpatchify: channel dim does not match patch size");
    const std::int64_t tt = to * q, hh = ho * p, ww = wo * p, c = channels;
    Tensor<S> out = Tensor<S>::zeros({b, tt, hh, ww, c});
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t ot = 0; ot < to; ++ot)
            for (std::int64_t oi = 0; oi < ho; ++oi)
                for (std::int64_t oj = 0; oj < wo; ++oj)
                    for (std::int64_t dt = 0; dt < q; ++dt)
                        for (std::int64_t di = 0; di < p; ++di)
                            for (std::int64_t dj = 0; dj < p; ++dj)
                                for (std::int64_t ch = 0; ch < c; ++ch) {
                                    const std::int64_t dch = ((dt * p + di) * p + dj) * c + ch;
                                    out[(((bi * tt + ot * q + dt) * hh + oi * p + di) * ww +
                                         oj * p + dj) * c + ch] =
                                        x[(((bi * to + ot) * ho + oi) * wo + oj) * dIn + dch];
                                }
    return out;
}

// ---------------------------------------------------------------------------
// fixed sinusoidal embeddings
// ---------------------------------------------------------------------------

namespace embed_detail {
inline double sinusoid(int pos, int pair, int half) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(pair) / half);
    return static_cast<double>(pos) * freq;
}
}  // namespace embed_detail

// [count, dim]: half sines, half cosines
template <typename S>
Tensor<S> timestep_embedding(const std::vector<int>& ts, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep_embedding: dim must be even");
    const int half = dim / 2;
    Tensor<S> out = Tensor<S>::zeros({static_cast<std::int64_t>(ts.size()), dim});
    for (std::size_t r = 0; r < ts.size(); ++r)
        for (int i = 0; i < half; ++i) {
            const double a = embed_detail::sinusoid(ts[r], i, half);
            out[static_cast<std::int64_t>(r) * dim + i] = static_cast<S>(std::sin(a));
            out[static_cast<std::int64_t>(r) * dim + half + i] = static_cast<S>(std::cos(a));
        }
    return out;
}

// Additive space-time position embedding: channel chunks for (t, i, j),
// each a sinusoidal embedding of that coordinate.
template <typename S>
Tensor<S> positional_embedding(const Grid3& g, int h) {
    if (h < 8 || h % 2 != 0) throw ConfigError("positional_embedding: h must be even and >= 8");
    int h_sp = (h / 3) & ~1;
    const int h_t = h - 2 * h_sp;
    Tensor<S> out = Tensor<S>::zeros({g.tokens(), h});
    for (std::int64_t f = 0; f < g.tokens(); ++f) {
        const TokenCoord c = coord_of(g, f);
        const int coords[3] = {c.t, c.i, c.j};
        const int widths[3] = {h_t, h_sp, h_sp};
        int off = 0;
        for (int a = 0; a < 3; ++a) {
            const int half = widths[a] / 2;
            for (int i = 0; i < half; ++i) {
                const double ang = embed_detail::sinusoid(coords[a], i, half);
                out[f * h + off + i] = static_cast<S>(std::sin(ang));
                out[f * h + off + half + i] = static_cast<S>(std::cos(ang));
            }
            off += widths[a];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

template <typename S>
struct NamedTensor {
    std::string name;
    Tensor<S> t;
};

struct LayerParamIdx {
    int ln1_g, ln1_b;
    int wq_h, wk_h, wv_h;
    int wq_l, wk_l, wv_l;
    int wo;
    int gate_w1, gate_b1, gate_w2, gate_b2;
    int ln2_g, ln2_b;
    int ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct ParamLayout {
    int embed_w = -1, embed_b = -1;
    std::vector<LayerParamIdx> layers;
    int final_ln_g = -1, final_ln_b = -1;
    int head_w = -1, head_b = -1;
};

enum class InitMode {
    kTraining,    // residual-identity start: output projections zeroed
    kFullRandom,  // every weight random; used by audits and tests
};

template <typename S>
struct ModelParams {
    std::vector<NamedTensor<S>> tensors;  // checkpoint manifest order
    ParamLayout layout;

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed, InitMode mode);

    Tensor<S>& at(int idx) { return tensors[static_cast<std::size_t>(idx)].t; }
    const Tensor<S>& at(int idx) const { return tensors[static_cast<std::size_t>(idx)].t; }
    int find(const std::string& name) const {
        for (std::size_t i = 0; i < tensors.size(); ++i)
            if (tensors[i].name == name) return static_cast<int>(i);
        throw ConfigError("params: no tensor named " + name);
    }
};

namespace param_detail {

enum class Fill { kZero, kOne, kNormal };

template <typename S>
void add_param(std::vector<NamedTensor<S>>& out, int& idx, const std::string& name, Shape sh,
               Fill fill, std::uint64_t seed) {
    Tensor<S> t = Tensor<S>::zeros(std::move(sh));
    if (fill == Fill::kOne) {
        std::fill(t.data.begin(), t.data.end(), S(1));
    } else if (fill == Fill::kNormal) {
        const std::uint64_t k = rng::key({seed, rng::kParamInit, static_cast<std::uint64_t>(idx)});
        for (std::int64_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<S>(rng::trunc_normal(k, static_cast<std::uint64_t>(i), 0.02));
    }
    out.push_back(NamedTensor<S>{name, std::move(t)});
    ++idx;
}

}  // namespace param_detail

template <typename S>
ModelParams<S> ModelParams<S>::init(const ModelConfig& cfg, std::uint64_t seed, InitMode mode) {
    using param_detail::Fill;
    cfg.validate();
    ModelParams<S> p;
    int idx = 0;
    const int h = cfg.hidden();
    const int din = cfg.token_dim();
    const int dte = cfg.t_embed_dim;
    const bool full = mode == InitMode::kFullRandom;
    auto add = [&](const std::string& name, Shape sh, Fill f) {
        param_detail::add_param<S>(p.tensors, idx, name, std::move(sh), f, seed);
    };

    add("embed.w", {din, h}, Fill::kNormal);
    add("embed.b", {h}, Fill::kZero);
    p.layout.embed_w = 0;
    p.layout.embed_b = 1;
    for (int l = 0; l < cfg.l_layers; ++l) {
        const LayerConfig& lc = cfg.layers[static_cast<std::size_t>(l)];
        const int hb = lc.h / 2;
        const std::string pre = "layers." + std::to_string(l) + ".";
        LayerParamIdx li{};
        li.ln1_g = idx; add(pre + "ln1.g", {h}, Fill::kOne);
        li.ln1_b = idx; add(pre + "ln1.b", {h}, Fill::kZero);
        li.wq_h = idx; add(pre + "attn_high.wq", {hb, hb}, Fill::kNormal);
        li.wk_h = idx; add(pre + "attn_high.wk", {hb, hb}, Fill::kNormal);
        li.wv_h = idx; add(pre + "attn_high.wv", {hb, hb}, Fill::kNormal);
        li.wq_l = idx; add(pre + "attn_low.wq", {hb, hb}, Fill::kNormal);
        li.wk_l = idx; add(pre + "attn_low.wk", {hb, hb}, Fill::kNormal);
        li.wv_l = idx; add(pre + "attn_low.wv", {hb, hb}, Fill::kNormal);
        li.wo = idx; add(pre + "wo", {h, h}, full ? Fill::kNormal : Fill::kZero);
        li.gate_w1 = idx; add(pre + "gate.w1", {dte, dte}, Fill::kNormal);
        li.gate_b1 = idx; add(pre + "gate.b1", {dte}, Fill::kZero);
        li.gate_w2 = idx; add(pre + "gate.w2", {dte, 2}, full ? Fill::kNormal : Fill::kZero);
        li.gate_b2 = idx; add(pre + "gate.b2", {2}, Fill::kZero);
        li.ln2_g = idx; add(pre + "ln2.g", {h}, Fill::kOne);
        li.ln2_b = idx; add(pre + "ln2.b", {h}, Fill::kZero);
        li.ffn_w1 = idx; add(pre + "ffn.w1", {h, h * lc.ffn_mult}, Fill::kNormal);
        li.ffn_b1 = idx; add(pre + "ffn.b1", {h * lc.ffn_mult}, Fill::kZero);
        li.ffn_w2 = idx; add(pre + "ffn.w2", {h * lc.ffn_mult, h}, full ? Fill::kNormal : Fill::kZero);
        li.ffn_b2 = idx; add(pre + "ffn.b2", {h}, Fill::kZero);
        p.layout.layers.push_back(li);
    }
    p.layout.final_ln_g = idx; add("final.ln.g", {h}, Fill::kOne);
    p.layout.final_ln_b = idx; add("final.ln.b", {h}, Fill::kZero);
    p.layout.head_w = idx; add("head.w", {h, din}, full ? Fill::kNormal : Fill::kZero);
    p.layout.head_b = idx; add("head.b", {din}, Fill::kZero);
    return p;
}

// ---------------------------------------------------------------------------
// workspace: geometry masks and position embedding for one token grid
// ---------------------------------------------------------------------------

template <typename S>
struct ModelWorkspace {
    Grid3 grid;
    std::vector<std::shared_ptr<const Mask>> mask_high;  // per layer, full grid
    std::vector<std::shared_ptr<const Mask>> mask_low;   // per layer, pooled grid
    Tensor<S> pos;                                       // [S, h]

    // `causal=false` builds the deliberately unmasked negative-control
    // fixture used by the causality audit.
    static ModelWorkspace build(const ModelConfig& cfg, std::optional<Grid3> grid_override = {},
                                bool causal = true, std::int64_t mask_cap = 65536) {
        cfg.validate();
        ModelWorkspace ws;
        ws.grid = grid_override.value_or(cfg.token_grid());
        ws.pos = positional_embedding<S>(ws.grid, cfg.hidden());
        for (const LayerConfig& lc : cfg.layers) {
            const auto hi = AttentionGeometry::high_res(ws.grid, lc.w, lc.v, causal);
            const Grid3 pg{ws.grid.t_frames, ws.grid.height / lc.r, ws.grid.width / lc.r};
            const auto lo = AttentionGeometry::low_res(pg, lc.d, causal);
            ws.mask_high.push_back(std::make_shared<Mask>(build_dense_mask(hi, mask_cap)));
            ws.mask_low.push_back(std::make_shared<Mask>(build_dense_mask(lo, mask_cap)));
        }
        return ws;
    }
};

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

template <typename S>
std::vector<Var<S>> push_params(Tape<S>& tape, const ModelParams<S>& params,
                                bool requires_grad = true) {
    std::vector<Var<S>> vars;
    vars.reserve(params.tensors.size());
    for (const auto& nt : params.tensors) vars.push_back(tape.leaf(nt.t, requires_grad));
    return vars;
}

// Per-frame branch gates from the frame's own timestep embedding:
// sinusoidal embed -> hidden -> 2 logits -> sigmoid. Returns ([T], [T]).
template <typename S>
std::pair<Var<S>, Var<S>> branch_gate(Tape<S>& tape, const FrameTimesteps& ft, Var<S> w1,
                                      Var<S> b1, Var<S> w2, Var<S> b2, int t_embed_dim) {
    for (int t : ft.idx)
        if (t < 0) throw ConfigError("branch_gate: negative timestep");
    const std::int64_t n_frames = static_cast<std::int64_t>(ft.idx.size());
    Var<S> e = tape.leaf(timestep_embedding<S>(ft.idx, t_embed_dim), false);
    Var<S> hdn = silu(add_rowvec(matmul(e, w1), b1));
    Var<S> logits = add_rowvec(matmul(hdn, w2), b2);  // [T, 2]
    Var<S> gates = sigmoid(logits);
    Var<S> g_h = reshape(slice_cols(gates, 0, 1), {n_frames});
    Var<S> g_l = reshape(slice_cols(gates, 1, 2), {n_frames});
    return {g_h, g_l};
}

// Optional per-layer probes for tests.
template <typename S>
struct LayerTrace {
    Var<S> attn_high;   // gated High-Res branch, pre-concat
    Var<S> attn_low;    // gated Low-Res branch, pre-concat
    Var<S> g_h, g_l;
};

template <typename S>
struct LayerVars {
    Var<S> ln1_g, ln1_b;
    AttentionParams<S> attn_h, attn_l;
    Var<S> wo;
    Var<S> gate_w1, gate_b1, gate_w2, gate_b2;
    Var<S> ln2_g, ln2_b;
    Var<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;

    static LayerVars from(const std::vector<Var<S>>& v, const LayerParamIdx& li,
                          const LayerConfig& lc) {
        LayerVars lv;
        lv.ln1_g = v[li.ln1_g]; lv.ln1_b = v[li.ln1_b];
        lv.attn_h = AttentionParams<S>{v[li.wq_h], v[li.wk_h], v[li.wv_h], lc.heads_h};
        lv.attn_l = AttentionParams<S>{v[li.wq_l], v[li.wk_l], v[li.wv_l], lc.heads_l};
        lv.wo = v[li.wo];
        lv.gate_w1 = v[li.gate_w1]; lv.gate_b1 = v[li.gate_b1];
        lv.gate_w2 = v[li.gate_w2]; lv.gate_b2 = v[li.gate_b2];
        lv.ln2_g = v[li.ln2_g]; lv.ln2_b = v[li.ln2_b];
        lv.ffn_w1 = v[li.ffn_w1]; lv.ffn_b1 = v[li.ffn_b1];
        lv.ffn_w2 = v[li.ffn_w2]; lv.ffn_b2 = v[li.ffn_b2];
        return lv;
    }
};

// One MSC layer:
//   y = x + Wo concat(g_H o A_H(LN(x)[:h/2]), g_L o Up_r(A_L(Pool_r(LN(x)[h/2:]))))
//   y = y + FFN(LN(y))
template <typename S>
Var<S> msc_layer_forward(Var<S> x, const LayerVars<S>& pv, const LayerConfig& lc, Grid3 grid,
                         const std::shared_ptr<const Mask>& mask_h,
                         const std::shared_ptr<const Mask>& mask_l, const FrameTimesteps& ft,
                         int t_embed_dim, LayerTrace<S>* trace = nullptr) {
    Tape<S>& tape = *x.tape;
    const std::int64_t h = x.val().dim(1);
    if (h != lc.h) throw ConfigError("msc_layer: input width does not match config");
    if (grid.height % lc.r != 0 || grid.width % lc.r != 0)
        throw ConfigError("msc_layer: grid not divisible by r");
    const std::int64_t hb = h / 2;

    auto [g_h, g_l] = branch_gate(tape, ft, pv.gate_w1, pv.gate_b1, pv.gate_w2, pv.gate_b2,
                                  t_embed_dim);

    Var<S> ln1 = layer_norm(x, pv.ln1_g, pv.ln1_b);
    Var<S> xh = slice_cols(ln1, 0, hb);
    Var<S> xl = slice_cols(ln1, hb, h);

    Var<S> ah = branch_attention(xh, pv.attn_h, mask_h);

    const Grid3 pooled{grid.t_frames, grid.height / lc.r, grid.width / lc.r};
    Var<S> al = avg_pool_tokens(xl, grid, lc.r);
    al = branch_attention(al, pv.attn_l, mask_l);
    al = upsample_tokens(al, pooled, lc.r);

    Var<S> gh_branch = mul_frame_scalar(ah, g_h, grid);
    Var<S> gl_branch = mul_frame_scalar(al, g_l, grid);
    if (trace) *trace = LayerTrace<S>{gh_branch, gl_branch, g_h, g_l};

    Var<S> cat = concat_cols(gh_branch, gl_branch);
    Var<S> y = add(x, matmul(cat, pv.wo));

    Var<S> ln2 = layer_norm(y, pv.ln2_g, pv.ln2_b);
    Var<S> f = silu(add_rowvec(matmul(ln2, pv.ffn_w1), pv.ffn_b1));
    f = add_rowvec(matmul(f, pv.ffn_w2), pv.ffn_b2);
    return add(y, f);
}

// Token-level forward: x_tokens [S, token_dim] -> predicted noise tokens.
template <typename S>
Var<S> model_forward_tokens(Tape<S>& tape, const Tensor<S>& x_tokens, const FrameTimesteps& ft,
                            const ModelConfig& cfg, const ParamLayout& layout,
                            const std::vector<Var<S>>& pv, const ModelWorkspace<S>& ws) {
    ft.validate(cfg.diffusion_steps, ws.grid.t_frames);
    if (x_tokens.shape != Shape{ws.grid.tokens(), cfg.token_dim()})
        throw ConfigError("model_forward: token tensor shape mismatch");
    Var<S> x = tape.leaf(x_tokens, false);
    Var<S> e = add_rowvec(matmul(x, pv[layout.embed_w]), pv[layout.embed_b]);
    e = add(e, tape.leaf(ws.pos, false));
    for (int l = 0; l < cfg.l_layers; ++l) {
        const LayerConfig& lc = cfg.layers[static_cast<std::size_t>(l)];
        const auto lv = LayerVars<S>::from(pv, layout.layers[static_cast<std::size_t>(l)], lc);
        e = msc_layer_forward(e, lv, lc, ws.grid, ws.mask_high[static_cast<std::size_t>(l)],
                              ws.mask_low[static_cast<std::size_t>(l)], ft, cfg.t_embed_dim);
    }
    Var<S> f = layer_norm(e, pv[layout.final_ln_g], pv[layout.final_ln_b]);
    return add_rowvec(matmul(f, pv[layout.head_w]), pv[layout.head_b]);
}

// Video-level forward: x_noisy [B,T,H,W,C] -> eps_pred of the same shape.
// Grid dims may differ from cfg as long as divisibility holds (the
// autoregressive sampler runs prefixes of the frame axis).
template <typename S>
Tensor<S> model_forward(const ModelConfig& cfg, const ModelParams<S>& params,
                        const FrameTimesteps& ft, const Tensor<S>& x_noisy,
                        const ModelWorkspace<S>& ws) {
    if (x_noisy.shape.size() != 5) throw ConfigError("model_forward: expected [B,T,H,W,C]");
    const std::int64_t b = x_noisy.dim(0);
    if (x_noisy.dim(4) != cfg.channels) throw ConfigError("model_forward: channel mismatch");
    Tensor<S> tokens_all = patchify(x_noisy, cfg.patch_p, cfg.patch_q);
    const Grid3 tg{static_cast<int>(tokens_all.dim(1)), static_cast<int>(tokens_all.dim(2)),
                   static_cast<int>(tokens_all.dim(3))};
    if (!(tg == ws.grid)) throw ConfigError("model_forward: workspace grid mismatch");
    const std::int64_t s = tg.tokens(), din = cfg.token_dim();

    Tensor<S> out_tokens = Tensor<S>::zeros(tokens_all.shape);
    for (std::int64_t bi = 0; bi < b; ++bi) {
        Tape<S> tape;
        std::vector<Var<S>> pv = push_params(tape, params, false);
        Tensor<S> xt = Tensor<S>::zeros({s, din});
        std::copy(tokens_all.data.begin() + bi * s * din,
                  tokens_all.data.begin() + (bi + 1) * s * din, xt.data.begin());
        Var<S> y = model_forward_tokens(tape, xt, ft, cfg, params.layout, pv, ws);
        std::copy(y.val().data.begin(), y.val().data.end(),
                  out_tokens.data.begin() + bi * s * din);
    }
    return unpatchify(out_tokens, cfg.patch_p, cfg.patch_q, cfg.channels);
}

}  // namespace msc
