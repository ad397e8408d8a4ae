#include "msc/model.hpp"

namespace msc {

namespace {
bool is_pow2(int x) { return x > 0 && (x & (x - 1)) == 0; }
}

std::vector<int> r_schedule(int l_total, int base_r, int max_r, std::optional<Grid3> token_grid) {
    if (l_total < 1) throw ConfigError("r_schedule: need at least one layer");
    if (!is_pow2(base_r) || !is_pow2(max_r) || base_r > max_r)
        throw ConfigError("r_schedule: base_r and max_r must be powers of two with base_r <= max_r");
    if (token_grid) {
        if (token_grid->height % max_r != 0 || token_grid->width % max_r != 0 ||
            token_grid->height / max_r < 1 || token_grid->width / max_r < 1)
            throw ConfigError("r_schedule: max_r exceeds what the token grid can pool");
    }
    // levels: base_r, 2*base_r, ..., max_r; layer l sits in level floor(l*n/L)
    int n_levels = 1;
    for (int r = base_r; r < max_r; r *= 2) ++n_levels;
    std::vector<int> out(static_cast<std::size_t>(l_total));
    for (int l = 0; l < l_total; ++l) {
        const int level = static_cast<int>((static_cast<std::int64_t>(l) * n_levels) / l_total);
        out[static_cast<std::size_t>(l)] = base_r << level;
    }
    return out;
}

}  // namespace msc
