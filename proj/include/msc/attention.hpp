#pragma once

#include <memory>

#include "msc/autograd.hpp"
#include "msc/geometry.hpp"

namespace msc {

// Projection weights for one resolution branch. The branch output projection
// is shared at the layer level, after concatenation.
template <typename S>
struct AttentionParams {
    Var<S> wq, wk, wv;  // each [h_b, h_b]
    int n_heads = 1;
};

// Masked multi-head attention over one branch's channel slice. Heads are
// contiguous slices of the projected channels; each head runs the fused
// masked attention under the same geometry mask and the outputs are
// concatenated back in head order.
template <typename S>
Var<S> branch_attention(Var<S> x, const AttentionParams<S>& p,
                        const std::shared_ptr<const Mask>& mask) {
    if (x.val().shape.size() != 2) throw ConfigError("branch_attention: expected [S, h_b] input");
    const std::int64_t s = x.val().dim(0), hb = x.val().dim(1);
    if (p.n_heads < 1 || hb % p.n_heads != 0)
        throw ConfigError("branch_attention: h_b must be divisible by n_heads");
    if (p.wq.val().shape != Shape{hb, hb} || p.wk.val().shape != Shape{hb, hb} ||
        p.wv.val().shape != Shape{hb, hb})
        throw ConfigError("branch_attention: projection shape mismatch");
    if (!mask || mask->rows != s || mask->cols != s)
        throw ConfigError("branch_attention: mask does not match token count");

    Var<S> q = matmul(x, p.wq);
    Var<S> k = matmul(x, p.wk);
    Var<S> v = matmul(x, p.wv);

    const std::int64_t hd = hb / p.n_heads;
    Var<S> out{};
    for (int h = 0; h < p.n_heads; ++h) {
        const std::int64_t c0 = h * hd;
        Var<S> oh = masked_attention(slice_cols(q, c0, c0 + hd), slice_cols(k, c0, c0 + hd),
                                     slice_cols(v, c0, c0 + hd), mask);
        out = (h == 0) ? oh : concat_cols(out, oh);
    }
    return out;
}

}  // namespace msc
