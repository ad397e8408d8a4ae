#include "msc/cost.hpp"

namespace msc::cost {

void CostInputs::validate() const {
    if (b < 1 || t < 1 || height < 1 || width < 1 || h < 1 || w < 1 || v < 1 || r < 1 || d < 1)
        throw ConfigError("cost: all inputs must be positive");
}

BigInt baseline_flops(std::int64_t b, std::int64_t s, std::int64_t h) {
    if (b < 1 || s < 1 || h < 1) throw ConfigError("cost: all inputs must be positive");
    const BigInt bb = b, ss = s, hh = h;
    return 8 * bb * ss * hh * hh + 2 * bb * ss * ss * hh;
}

BigRat highres_flops(std::int64_t b, std::int64_t s, std::int64_t h, std::int64_t w,
                     std::int64_t v) {
    if (b < 1 || s < 1 || h < 1 || w < 1 || v < 1)
        throw ConfigError("cost: all inputs must be positive");
    const BigInt bb = b, ss = s, hh = h;
    return BigRat(2 * bb * ss * hh * hh) + BigRat(bb * ss * ss * hh, BigInt(2) * w * w * v);
}

BigRat lowres_flops(std::int64_t b, std::int64_t s, std::int64_t h, std::int64_t r,
                    std::int64_t d) {
    if (b < 1 || s < 1 || h < 1 || r < 1 || d < 1)
        throw ConfigError("cost: all inputs must be positive");
    const BigInt bb = b, ss = s, hh = h;
    return BigRat(2 * bb * ss * hh * hh, BigInt(r) * r) +
           BigRat(bb * ss * ss * hh, BigInt(2) * r * r * d);
}

BigRat highres_flops_derived(std::int64_t b, std::int64_t s, std::int64_t h, std::int64_t w,
                             std::int64_t v) {
    if (b < 1 || s < 1 || h < 1 || w < 1 || v < 1)
        throw ConfigError("cost: all inputs must be positive");
    const BigInt bb = b, ss = s, hh = h;
    // projections as printed; attention 4 * (h/2) FLOPs per pair at s*w^2*v pairs
    return BigRat(2 * bb * ss * hh * hh) + BigRat(2 * bb * ss * w * w * v * hh);
}

BigRat lowres_flops_derived(std::int64_t b, std::int64_t s, std::int64_t h, std::int64_t r,
                            std::int64_t d) {
    if (b < 1 || s < 1 || h < 1 || r < 1 || d < 1)
        throw ConfigError("cost: all inputs must be positive");
    const BigInt bb = b, ss = s, hh = h;
    const BigInt r4 = BigInt(r) * r * r * r;
    return BigRat(2 * bb * ss * hh * hh, BigInt(r) * r) + BigRat(2 * bb * ss * ss * hh, r4 * d);
}

BigInt empirical_attention_term(std::uint64_t pairs, std::int64_t b, std::int64_t h_branch) {
    return BigInt(4) * h_branch * BigInt(pairs) * b;
}

BigInt empirical_attention_flops_from_pairs(std::uint64_t pairs, std::int64_t s_geom,
                                            std::int64_t b, std::int64_t h_branch) {
    return empirical_attention_term(pairs, b, h_branch) +
           BigInt(8) * b * s_geom * BigInt(h_branch) * h_branch;
}

BigInt empirical_attention_flops(const AttentionGeometry& geom, std::int64_t b,
                                 std::int64_t h_branch) {
    return empirical_attention_flops_from_pairs(pair_count(geom), geom.grid.tokens(), b,
                                                h_branch);
}

CostReport compare(const CostInputs& in) {
    in.validate();
    if (in.height % in.r != 0 || in.width % in.r != 0)
        throw ConfigError("cost: token grid not divisible by r");
    CostReport rep;
    rep.inputs = in;
    const std::int64_t s = in.s();
    rep.baseline = baseline_flops(in.b, s, in.h);
    rep.highres = highres_flops(in.b, s, in.h, in.w, in.v);
    rep.lowres = lowres_flops(in.b, s, in.h, in.r, in.d);
    rep.msc_total = rep.highres + rep.lowres;
    rep.highres_derived = highres_flops_derived(in.b, s, in.h, in.w, in.v);
    rep.lowres_derived = lowres_flops_derived(in.b, s, in.h, in.r, in.d);
    rep.msc_total_derived = rep.highres_derived + rep.lowres_derived;
    rep.savings_ratio = BigRat(rep.baseline) / rep.msc_total;
    rep.savings_ratio_derived = BigRat(rep.baseline) / rep.msc_total_derived;

    const Grid3 grid{static_cast<int>(in.t), static_cast<int>(in.height),
                     static_cast<int>(in.width)};
    const auto hi = AttentionGeometry::high_res(grid, static_cast<int>(in.w),
                                                static_cast<int>(in.v));
    const Grid3 pooled{grid.t_frames, grid.height / static_cast<int>(in.r),
                       grid.width / static_cast<int>(in.r)};
    const auto lo = AttentionGeometry::low_res(pooled, static_cast<int>(in.d));
    rep.pairs_high = pair_count(hi);
    rep.pairs_low = pair_count(lo);
    rep.empirical_high = empirical_attention_flops_from_pairs(rep.pairs_high, s, in.b, in.h / 2);
    rep.empirical_low = empirical_attention_flops_from_pairs(rep.pairs_low, pooled.tokens(),
                                                             in.b, in.h / 2);
    rep.discrepancy_notes =
        "closed-form attention terms carry one factor of h/2 where a per-pair count gives "
        "4*(h/2) FLOPs per pair, and the low-res closed form scales as 1/r^2 where the "
        "pair-count derivation yields 1/r^4; derived variants and empirical pair counts are "
        "reported alongside for arbitration";
    rep.flop_convention = "1 multiply-add = 2 FLOPs";
    return rep;
}

double to_double(const BigRat& r) { return r.convert_to<double>(); }

std::string to_exact_string(const BigRat& r) {
    if (boost::multiprecision::denominator(r) == 1)
        return boost::multiprecision::numerator(r).str();
    return boost::multiprecision::numerator(r).str() + "/" +
           boost::multiprecision::denominator(r).str();
}

}  // namespace msc::cost
