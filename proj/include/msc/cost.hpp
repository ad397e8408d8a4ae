#pragma once

#include <cstdint>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>

#include "msc/geometry.hpp"

// Closed-form FLOP model for baseline and MSC attention, plus an empirical
// counter driven by geometry pair counts. Everything here is exact integer /
// rational arithmetic; no floating point. Convention: one multiply-add
// counts as 2 FLOPs.

namespace msc::cost {

using BigInt = boost::multiprecision::cpp_int;
using BigRat = boost::multiprecision::cpp_rational;

struct CostInputs {
    std::int64_t b = 1;
    std::int64_t t = 8, height = 16, width = 16;  // token grid; s = t*height*width
    std::int64_t h = 256;
    std::int64_t w = 4, v = 2;  // High-Res windows
    std::int64_t r = 2;         // Low-Res down factor
    std::int64_t d = 4;         // Low-Res temporal stride

    std::int64_t s() const { return t * height * width; }
    void validate() const;
};

// 8 b s h^2 + 2 b s^2 h (projections + attention + out projection)
BigInt baseline_flops(std::int64_t b, std::int64_t s, std::int64_t h);

// 2 b s h^2 + b s^2 h / (2 w^2 v), as printed
BigRat highres_flops(std::int64_t b, std::int64_t s, std::int64_t h, std::int64_t w,
                     std::int64_t v);

// 2 b s h^2 / r^2 + b s^2 h / (2 r^2 d), as printed
BigRat lowres_flops(std::int64_t b, std::int64_t s, std::int64_t h, std::int64_t r,
                    std::int64_t d);

// First-principles variants: same projection terms, attention term from the
// per-pair count (4 FLOPs per allowed pair per branch channel).
BigRat highres_flops_derived(std::int64_t b, std::int64_t s, std::int64_t h, std::int64_t w,
                             std::int64_t v);
BigRat lowres_flops_derived(std::int64_t b, std::int64_t s, std::int64_t h, std::int64_t r,
                            std::int64_t d);

// Attention term alone: 4 * h_branch FLOPs per allowed pair (Q K^T and A V,
// each 2 * h_branch).
BigInt empirical_attention_term(std::uint64_t pairs, std::int64_t b, std::int64_t h_branch);

// Attention term plus 8 b s_geom h_branch^2 projection FLOPs.
BigInt empirical_attention_flops_from_pairs(std::uint64_t pairs, std::int64_t s_geom,
                                            std::int64_t b, std::int64_t h_branch);
BigInt empirical_attention_flops(const AttentionGeometry& geom, std::int64_t b,
                                 std::int64_t h_branch);

struct CostReport {
    CostInputs inputs;
    BigInt baseline;
    BigRat highres, lowres, msc_total;
    BigRat highres_derived, lowres_derived, msc_total_derived;
    std::uint64_t pairs_high = 0, pairs_low = 0;
    BigInt empirical_high, empirical_low;  // per-branch, h_branch = h/2
    BigRat savings_ratio;                  // baseline / msc_total
    BigRat savings_ratio_derived;
    std::string discrepancy_notes;
    std::string flop_convention;
};

CostReport compare(const CostInputs& in);

double to_double(const BigRat& r);
std::string to_exact_string(const BigRat& r);

}  // namespace msc::cost
