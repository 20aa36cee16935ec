// Shared helpers for the test binaries: a desk-scale tracker config that
// keeps per-test training in the tens of milliseconds, and small numeric
// utilities.
#pragma once

#include <cmath>

#include "sdt/config.hpp"
#include "sdt/core.hpp"

namespace sdt::testing {

// Small feature budget and short training schedules; everything else keeps
// the production defaults.
inline TrackerConfig desk_config() {
    TrackerConfig cfg;
    cfg.n_select = 12;
    cfg.head_hidden_channels = 2;
    cfg.init_iterations = 60;
    cfg.selector_iterations = 20;
    cfg.finetune_iterations = 10;
    cfg.particle_count = 200;
    return cfg;
}

inline double ncc(const HeatMap& a, const HeatMap& b) {
    const size_t n = a.values.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a.values[i];
        mb += b.values[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < n; ++i) {
        const double xa = a.values[i] - ma, xb = b.values[i] - mb;
        num += xa * xb;
        da += xa * xa;
        db += xb * xb;
    }
    if (da <= 0.0 || db <= 0.0) return 0.0;
    return num / std::sqrt(da * db);
}

}  // namespace sdt::testing
