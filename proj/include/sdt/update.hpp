/*
 * Prioritized online update of the holistic head: a small pool of confident
 * positive samples, a quadratic temporal weight that favors both the first
 * and the most recent frames, a sampling distribution over the pool, two
 * gating conditions checked every few frames, and a truncated-loss fine-tune
 * that trains on the sampled positive foreground plus the current frame's
 * background.
 */
#pragma once

#include <array>
#include <limits>

#include "sdt/config.hpp"
#include "sdt/convnet.hpp"
#include "sdt/core.hpp"
#include "sdt/rng.hpp"

namespace sdt {

struct PoolEntry {
    int frame = 0;
    ChannelStack features;        // masked holistic stack for that frame
    BoundingBox box;              // estimated box, frame coords
    HeatMap target;               // Gaussian map built from the estimate
    std::vector<double> fg_mask;  // 1 inside the estimated box on the heat raster
    double confidence = 0.0;
};

struct PositiveSamplePool {
    int capacity = 10;
    double insert_ratio = 0.85;  // condition (ii): C / max > ratio
    std::vector<PoolEntry> entries;

    double min_confidence() const {
        double m = entries.front().confidence;
        for (const auto& e : entries) m = std::min(m, e.confidence);
        return m;
    }
    double max_confidence() const {
        double m = entries.front().confidence;
        for (const auto& e : entries) m = std::max(m, e.confidence);
        return m;
    }
};

// Insert when below capacity; otherwise the new entry replaces the current
// minimum-confidence entry if it beats the minimum outright or comes within
// `insert_ratio` of the maximum. Returns true when the entry was kept.
inline bool try_insert(PositiveSamplePool& pool, PoolEntry entry) {
    if (entry.confidence <= 0.0) return false;
    for (const auto& e : pool.entries)
        if (e.frame == entry.frame) return false;
    if (static_cast<int>(pool.entries.size()) < pool.capacity) {
        pool.entries.push_back(std::move(entry));
        return true;
    }
    const double cmin = pool.min_confidence();
    const double cmax = pool.max_confidence();
    if (!(entry.confidence > cmin || entry.confidence / cmax > pool.insert_ratio)) return false;
    size_t victim = 0;
    for (size_t i = 1; i < pool.entries.size(); ++i)
        if (pool.entries[i].confidence < pool.entries[victim].confidence) victim = i;
    pool.entries[victim] = std::move(entry);
    return true;
}

// Quadratic weight over frame age: exactly 1 at the first and current frame,
// dipping toward theta in between. Frames t <= 2 degenerate to 1.
inline double temporal_weight(double sample_frame, int t, double theta) {
    if (t <= 2) return 1.0;
    const double td = t;
    const double a = 4.0 * (1.0 - theta) / (td * (td - 2.0));
    const double b = 4.0 * (td + 1.0) * (theta - 1.0) / (td * (td - 2.0));
    const double c = (td - 4.0 * theta + 2.0) / (td - 2.0);
    return a * sample_frame * sample_frame + b * sample_frame + c;
}

// P(entry i) proportional to W_i * C_i / max C; scale-invariant in C.
inline std::vector<double> selection_distribution(const PositiveSamplePool& pool, int t,
                                                  double theta) {
    if (pool.entries.empty())
        throw std::runtime_error("selection_distribution: empty sample pool");
    const double cmax = pool.max_confidence();
    std::vector<double> p(pool.entries.size());
    double sum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double w = std::max(0.0, temporal_weight(pool.entries[i].frame, t, theta));
        p[i] = w * pool.entries[i].confidence / cmax;
        sum += p[i];
    }
    if (sum <= 0.0) {
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
        return p;
    }
    for (double& v : p) v /= sum;
    return p;
}

struct UpdateDecision {
    bool fire = false;
    int entry_index = -1;
    double probability = 0.0;          // P of the sampled entry
    double sampled_confidence = 0.0;
    double confidence_ratio = 0.0;     // sampled / current
    int peak_count = 0;
};

// Checked only on checkpoint frames (every `period`). A sampled pool entry
// must be at least `ratio` times more confident than the current frame, and
// the raw holistic map must show at least two surviving peaks.
inline UpdateDecision check_update_conditions(const PositiveSamplePool& pool, double current_conf,
                                              int mh_peak_count, int frame_idx,
                                              const TrackerConfig& cfg, Rng& rng) {
    UpdateDecision d;
    d.peak_count = mh_peak_count;
    if (cfg.update_period <= 0 || frame_idx % cfg.update_period != 0) return d;
    const std::vector<double> p = selection_distribution(pool, frame_idx, cfg.theta);
    const double u = rng.uniform();
    double cum = 0.0;
    size_t n = p.size() - 1;
    for (size_t i = 0; i < p.size(); ++i) {
        cum += p[i];
        if (u < cum) {
            n = i;
            break;
        }
    }
    d.entry_index = static_cast<int>(n);
    d.probability = p[n];
    d.sampled_confidence = pool.entries[n].confidence;
    d.confidence_ratio = current_conf > 0.0
                             ? d.sampled_confidence / current_conf
                             : std::numeric_limits<double>::infinity();
    d.fire = d.sampled_confidence > cfg.update_confidence_ratio * current_conf &&
             mh_peak_count >= 2;
    return d;
}

struct FinetuneResult {
    double pre_loss = 0.0;   // data term before the first step
    double post_loss = 0.0;  // data term after the last step
    double epsilon = 0.0;    // truncation scale used
    bool reverted = false;
};

// One fine-tune pass: squared error truncated per pixel below
// eps/(k + mu*phi), evaluated on the positive sample's foreground and the
// current frame's background, plus Frobenius decay on the kernels. If the
// data loss fails to improve (or turns non-finite) the weights are restored.
inline FinetuneResult finetune_hnet(HeadNet& hnet, const PoolEntry& positive,
                                    const PoolEntry& current, const TrackerConfig& cfg) {
    if (positive.features.channels != hnet.l1.in_ch ||
        current.features.channels != hnet.l1.in_ch)
        throw std::invalid_argument("finetune_hnet: feature channel mismatch");

    std::vector<double> bg_mask(current.fg_mask.size());
    for (size_t i = 0; i < bg_mask.size(); ++i) bg_mask[i] = 1.0 - current.fg_mask[i];

    struct Sample {
        const ChannelStack* in;
        const HeatMap* target;
        const std::vector<double>* mask;
    };
    const std::array<Sample, 2> samples = {Sample{&positive.features, &positive.target,
                                                  &positive.fg_mask},
                                           Sample{&current.features, &current.target, &bg_mask}};

    // Truncation scale: largest masked residual at the start of the pass.
    double e_max = 0.0;
    for (const auto& s : samples) {
        HeatMap out = head_forward(hnet, *s.in);
        for (size_t i = 0; i < out.values.size(); ++i)
            if ((*s.mask)[i] != 0.0)
                e_max = std::max(e_max, std::abs(out.values[i] - s.target->values[i]));
    }

    FinetuneResult result;
    result.epsilon = cfg.trunc_epsilon_factor * e_max;
    const HeadNet snapshot = hnet;

    auto pass_loss = [&](bool step) {
        HeadGrads grads;
        if (step) grads.match(hnet);
        double loss = 0.0;
        for (const auto& s : samples) {
            HeadCache cache;
            HeatMap out = head_forward(hnet, *s.in, &cache);
            TruncationSpec trunc{result.epsilon, cfg.trunc_k, cfg.trunc_mu, s.target};
            HeatMap d_out;
            loss += masked_squared_loss(out, *s.target, s.mask, &trunc, d_out);
            if (step) head_backward(hnet, cache, d_out, grads);
        }
        if (step) head_apply_step(hnet, grads, cfg.finetune_learning_rate, cfg.beta_w);
        return loss;
    };

    result.pre_loss = pass_loss(false);
    for (int it = 0; it < cfg.finetune_iterations; ++it) {
        const double loss = pass_loss(true);
        if (!std::isfinite(loss)) {
            hnet = snapshot;
            result.reverted = true;
            result.post_loss = loss;
            return result;
        }
    }
    result.post_loss = pass_loss(false);
    if (!std::isfinite(result.post_loss) || result.post_loss > result.pre_loss) {
        hnet = snapshot;
        result.reverted = true;
    }
    return result;
}

}  // namespace sdt
