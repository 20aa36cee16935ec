/*
 * Mixed-model tracker. One holistic head regresses a heat map for the whole
 * target from the coarse feature stack; four part heads (TL, TR, BL, BR
 * quadrants) do the same from the fine stack and stay frozen after frame 1.
 * When the holistic map splinters into several strong peaks, the part peaks
 * vote: the holistic peak with the smallest mean distance to the valid part
 * peaks keeps its watershed region and the rest of the map is zeroed.
 * Localization samples particles around the ROI center, reads mean heat per
 * particle, compensates scale by confidence, and freezes the box when
 * confidence collapses.
 */
#pragma once

#include <deque>
#include <limits>
#include <numeric>
#include <queue>

#include "sdt/config.hpp"
#include "sdt/convnet.hpp"
#include "sdt/core.hpp"
#include "sdt/features.hpp"
#include "sdt/prior.hpp"
#include "sdt/rng.hpp"
#include "sdt/update.hpp"

namespace sdt {

// ---------------------------------------------------------------------------
// Regional maxima via priority-flood watershed.
// ---------------------------------------------------------------------------

struct Peak {
    double x = 0, y = 0;  // plateau centroid
    double value = 0;
    std::vector<uint32_t> region;  // watershed basin, disjoint across peaks
};

// Finds maximal plateaus (8-connected equal-value components with no greater
// neighbor), floods the map to assign every pixel to one of them, then drops
// peaks below keep_ratio * global max. All-zero (or non-positive) maps yield
// an empty list.
inline std::vector<Peak> find_peaks(const HeatMap& map, double keep_ratio = 0.8) {
    const int w = map.width, h = map.height;
    const size_t n = map.values.size();
    for (double v : map.values)
        if (!std::isfinite(v)) throw std::invalid_argument("find_peaks: non-finite map");

    const auto neighbors = [&](uint32_t idx, auto&& fn) {
        const int x = static_cast<int>(idx) % w, y = static_cast<int>(idx) / w;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0) continue;
                const int nx = x + dx, ny = y + dy;
                if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                fn(static_cast<uint32_t>(ny) * w + nx);
            }
    };

    // Maximal plateaus become seeds; peak location is the plateau centroid.
    std::vector<Peak> peaks;
    std::vector<int> label(n, -1);
    std::vector<uint8_t> visited(n, 0);
    std::vector<uint32_t> stack, plateau;
    for (uint32_t start = 0; start < n; ++start) {
        if (visited[start]) continue;
        const double v = map.values[start];
        bool maximal = v > 0.0;
        plateau.clear();
        stack.assign(1, start);
        visited[start] = 1;
        while (!stack.empty()) {
            const uint32_t p = stack.back();
            stack.pop_back();
            plateau.push_back(p);
            neighbors(p, [&](uint32_t q) {
                if (map.values[q] > v) maximal = false;
                if (map.values[q] == v && !visited[q]) {
                    visited[q] = 1;
                    stack.push_back(q);
                }
            });
        }
        if (!maximal) continue;
        Peak peak;
        double sx = 0, sy = 0;
        for (uint32_t p : plateau) {
            sx += static_cast<double>(p % w);
            sy += static_cast<double>(p / w);
            label[p] = static_cast<int>(peaks.size());
        }
        peak.x = sx / static_cast<double>(plateau.size());
        peak.y = sy / static_cast<double>(plateau.size());
        peak.value = v;
        peaks.push_back(std::move(peak));
    }
    if (peaks.empty()) return peaks;

    // Priority flood: highest value first, insertion order breaks ties.
    struct QItem {
        double value;
        uint64_t age;
        uint32_t idx;
        int label;
    };
    const auto later = [](const QItem& a, const QItem& b) {
        if (a.value != b.value) return a.value < b.value;
        return a.age > b.age;
    };
    std::priority_queue<QItem, std::vector<QItem>, decltype(later)> queue(later);
    uint64_t age = 0;
    std::vector<uint8_t> expanded(n, 0);
    for (uint32_t p = 0; p < n; ++p)
        if (label[p] >= 0) queue.push({map.values[p], age++, p, label[p]});
    while (!queue.empty()) {
        const QItem item = queue.top();
        queue.pop();
        if (expanded[item.idx]) continue;
        expanded[item.idx] = 1;
        if (label[item.idx] < 0) label[item.idx] = item.label;
        neighbors(item.idx, [&](uint32_t q) {
            if (!expanded[q]) queue.push({map.values[q], age++, q, label[item.idx]});
        });
    }
    for (uint32_t p = 0; p < n; ++p) peaks[static_cast<size_t>(label[p])].region.push_back(p);

    double global = peaks[0].value;
    for (const Peak& p : peaks) global = std::max(global, p.value);
    std::vector<Peak> kept;
    for (Peak& p : peaks)
        if (p.value >= keep_ratio * global) kept.push_back(std::move(p));
    return kept;
}

// Noise wrinkles split one blob into several maxima whose shared boundary sits
// almost as high as the weaker peak; distinct targets meet near the background
// level. Peaks joined by a saddle above saddle_ratio times the weaker peak are
// one hypothesis: the stronger peak represents the union of their regions.
inline constexpr double kPeakSaddleMergeRatio = 0.7;

inline std::vector<Peak> merge_shallow_peaks(const HeatMap& map, std::vector<Peak> peaks,
                                             double saddle_ratio = kPeakSaddleMergeRatio) {
    const size_t n = peaks.size();
    if (n < 2) return peaks;
    const int w = map.width, h = map.height;

    std::vector<int> owner(map.values.size(), -1);
    for (size_t i = 0; i < n; ++i)
        for (uint32_t p : peaks[i].region) owner[p] = static_cast<int>(i);

    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> saddle(n, std::vector<double>(n, ninf));
    constexpr int kOff[4][2] = {{1, 0}, {-1, 1}, {0, 1}, {1, 1}};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t p = static_cast<size_t>(y) * w + x;
            const int a = owner[p];
            if (a < 0) continue;
            for (const auto& off : kOff) {
                const int nx = x + off[0], ny = y + off[1];
                if (nx < 0 || nx >= w || ny >= h) continue;
                const size_t q = static_cast<size_t>(ny) * w + nx;
                const int b = owner[q];
                if (b < 0 || b == a) continue;
                const double s = std::min(map.values[p], map.values[q]);
                const size_t ua = static_cast<size_t>(a), ub = static_cast<size_t>(b);
                saddle[ua][ub] = std::max(saddle[ua][ub], s);
                saddle[ub][ua] = saddle[ua][ub];
            }
        }

    std::vector<size_t> parent(n);
    std::iota(parent.begin(), parent.end(), size_t{0});
    const auto find = [&](size_t i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    };
    for (size_t a = 0; a < n; ++a)
        for (size_t b = a + 1; b < n; ++b)
            if (saddle[a][b] >= saddle_ratio * std::min(peaks[a].value, peaks[b].value))
                parent[find(a)] = find(b);

    // The strongest member (ties to the earliest) represents each group.
    std::vector<int> rep(n, -1);
    for (size_t i = 0; i < n; ++i) {
        const size_t r = find(i);
        if (rep[r] < 0 || peaks[i].value > peaks[static_cast<size_t>(rep[r])].value)
            rep[r] = static_cast<int>(i);
    }
    std::vector<Peak> merged;
    for (size_t i = 0; i < n; ++i) {
        if (rep[find(i)] != static_cast<int>(i)) continue;
        Peak out;
        out.x = peaks[i].x;
        out.y = peaks[i].y;
        out.value = peaks[i].value;
        for (size_t j = 0; j < n; ++j)
            if (find(j) == find(i))
                out.region.insert(out.region.end(), peaks[j].region.begin(),
                                  peaks[j].region.end());
        merged.push_back(std::move(out));
    }
    return merged;
}

// Distinct target hypotheses of a holistic map: every regional maximum keeps
// its full catchment, wrinkles are merged away, then weak hypotheses below
// keep_ratio of the strongest are dropped (their pixels stay unowned).
inline std::vector<Peak> holistic_hypotheses(const HeatMap& map, double keep_ratio,
                                             double saddle_ratio = kPeakSaddleMergeRatio) {
    std::vector<Peak> peaks = merge_shallow_peaks(map, find_peaks(map, 0.0), saddle_ratio);
    double global = 0.0;
    for (const Peak& p : peaks) global = std::max(global, p.value);
    std::erase_if(peaks, [&](const Peak& p) { return p.value < keep_ratio * global; });
    return peaks;
}

// ---------------------------------------------------------------------------
// Part-peak voting.
// ---------------------------------------------------------------------------

struct RectifyInfo {
    HeatMap map;
    int holistic_peaks = 0;    // surviving peaks in the input map
    int valid_part_peaks = 0;  // part maps that contributed exactly one peak
    int winner = -1;           // index into the surviving holistic peaks
};

namespace detail {

inline RectifyInfo rectify_with_peaks(const HeatMap& mh, std::vector<Peak> hp,
                                      const std::array<HeatMap, 4>& parts, double keep_ratio,
                                      int min_peaks) {
    RectifyInfo info;
    info.map = mh;
    info.holistic_peaks = static_cast<int>(hp.size());
    if (static_cast<int>(hp.size()) < min_peaks) return info;

    // Multi-peak part maps are ambiguous and get discarded.
    std::vector<std::pair<double, double>> votes;
    for (const HeatMap& part : parts) {
        std::vector<Peak> pp = holistic_hypotheses(part, keep_ratio);
        if (pp.size() == 1) votes.emplace_back(pp[0].x, pp[0].y);
    }
    info.valid_part_peaks = static_cast<int>(votes.size());

    // With every part abstaining there is no evidence to pick a side, so the
    // map passes through unchanged.
    if (votes.empty()) return info;

    size_t winner = 0;
    {
        std::vector<double> mean_dist(hp.size(), 0.0);
        for (size_t i = 0; i < hp.size(); ++i) {
            for (const auto& [vx, vy] : votes)
                mean_dist[i] += std::hypot(hp[i].x - vx, hp[i].y - vy);
            mean_dist[i] /= static_cast<double>(votes.size());
        }
        for (size_t i = 1; i < hp.size(); ++i) {
            if (mean_dist[i] < mean_dist[winner] ||
                (mean_dist[i] == mean_dist[winner] && hp[i].value > hp[winner].value))
                winner = i;
        }
    }
    info.winner = static_cast<int>(winner);

    std::vector<uint8_t> keep(info.map.values.size(), 0);
    for (uint32_t p : hp[winner].region) keep[p] = 1;
    for (size_t p = 0; p < info.map.values.size(); ++p)
        if (!keep[p]) info.map.values[p] = 0.0;
    return info;
}

}  // namespace detail

// Keeps the holistic hypothesis whose watershed region best agrees with the
// part votes; a map with fewer than min_peaks surviving hypotheses passes
// through unchanged.
inline RectifyInfo rectify_holistic_info(const HeatMap& mh, const std::array<HeatMap, 4>& parts,
                                         double keep_ratio = 0.8, int min_peaks = 2) {
    return detail::rectify_with_peaks(mh, holistic_hypotheses(mh, keep_ratio), parts,
                                      keep_ratio, min_peaks);
}

inline HeatMap rectify_holistic(const HeatMap& mh, const std::array<HeatMap, 4>& parts,
                                double keep_ratio = 0.8, int min_peaks = 2) {
    return rectify_holistic_info(mh, parts, keep_ratio, min_peaks).map;
}

// ---------------------------------------------------------------------------
// Particle localization with confidence-driven scale compensation.
// ---------------------------------------------------------------------------

struct TargetEstimate {
    BoundingBox box;
    double confidence = 0.0;
    bool frozen = false;
};

// Affine correspondence between frame coordinates and the square heat raster
// covering the ROI; matches the crop_resize sampling convention.
struct RoiTransform {
    double cx = 0, cy = 0;  // ROI center, frame coords
    double size = 0;        // ROI side length, frame pixels
    int raster = kFeatureMapSize;

    double map_x(double fx) const { return (fx - (cx - 0.5 * size)) * raster / size - 0.5; }
    double map_y(double fy) const { return (fy - (cy - 0.5 * size)) * raster / size - 0.5; }
    double frame_x(double mx) const { return (cx - 0.5 * size) + (mx + 0.5) * size / raster; }
    double frame_y(double my) const { return (cy - 0.5 * size) + (my + 0.5) * size / raster; }
    double zoom() const { return static_cast<double>(raster) / size; }
};

struct LocalizeParams {
    double first_w = 0, first_h = 0;    // frame-1 box dimensions
    double first_confidence = -1.0;     // C from frame 1; <= 0 skips scale compensation
    double freeze_threshold = -1.0;     // freeze below this confidence; < 0 disables
};

// Scores particles by mean positive heat inside their box times scale^gamma.
// The winner's scale is then replaced by the confidence-ratio compensation
// (C/C_1)^lambda_sigma relative to the frame-1 box.
inline TargetEstimate localize(const HeatMap& heat, const TargetEstimate& prev,
                               const RoiTransform& roi, const TrackerConfig& cfg,
                               const LocalizeParams& params, Rng& rng) {
    if (heat.width != roi.raster || heat.height != roi.raster)
        throw std::invalid_argument("localize: heat raster mismatch");
    const bool any_positive =
        std::any_of(heat.values.begin(), heat.values.end(), [](double v) { return v > 0.0; });
    if (!any_positive) return {prev.box, 0.0, true};

    // Particles spread around the ROI center, which tracks the previous box
    // unless the prior stage relocated the search region.
    double best_c = -1.0, best_x = roi.cx, best_y = roi.cy, best_sigma = prev.box.scale;
    for (int i = 0; i < cfg.particle_count; ++i) {
        const double px = roi.cx + rng.normal(0.0, cfg.particle_translation_factor * prev.box.w);
        const double py = roi.cy + rng.normal(0.0, cfg.particle_translation_factor * prev.box.h);
        const double sigma = prev.box.scale * std::exp(rng.normal(0.0, cfg.particle_scale_jitter));
        const double wm = params.first_w * sigma * roi.zoom();
        const double hm = params.first_h * sigma * roi.zoom();
        const double mx = roi.map_x(px), my = roi.map_y(py);

        int x0 = static_cast<int>(std::ceil(mx - 0.5 * wm));
        int x1 = static_cast<int>(std::floor(mx + 0.5 * wm));
        int y0 = static_cast<int>(std::ceil(my - 0.5 * hm));
        int y1 = static_cast<int>(std::floor(my + 0.5 * hm));
        if (x1 < x0) x0 = x1 = static_cast<int>(std::lround(mx));
        if (y1 < y0) y0 = y1 = static_cast<int>(std::lround(my));
        double v = 0.0;
        if (x1 >= 0 && x0 < roi.raster && y1 >= 0 && y0 < roi.raster) {
            const int cx0 = std::max(x0, 0), cx1 = std::min(x1, roi.raster - 1);
            const int cy0 = std::max(y0, 0), cy1 = std::min(y1, roi.raster - 1);
            double sum = 0.0;
            for (int y = cy0; y <= cy1; ++y)
                for (int x = cx0; x <= cx1; ++x)
                    sum += std::max(0.0, heat.values[static_cast<size_t>(y) * roi.raster + x]);
            // mean over the full rasterized box, so clipped particles score lower
            v = sum / (static_cast<double>(x1 - x0 + 1) * static_cast<double>(y1 - y0 + 1));
        }
        const double c = v * std::pow(sigma, cfg.gamma);
        if (c > best_c) {
            best_c = c;
            best_x = px;
            best_y = py;
            best_sigma = sigma;
        }
    }

    if (best_c <= 0.0) return {prev.box, 0.0, true};
    if (params.freeze_threshold >= 0.0 && best_c < params.freeze_threshold)
        return {prev.box, best_c, true};

    double sigma_star = best_sigma;
    if (params.first_confidence > 0.0)
        sigma_star = std::clamp(std::pow(best_c / params.first_confidence, cfg.lambda_sigma),
                                0.1, 10.0);
    TargetEstimate out;
    out.box = BoundingBox{best_x, best_y, params.first_w * sigma_star,
                          params.first_h * sigma_star, sigma_star};
    out.confidence = best_c;
    out.frozen = false;
    return out;
}

// ---------------------------------------------------------------------------
// Tracker state machine.
// ---------------------------------------------------------------------------

enum class Ablation {
    full,
    no_update,
    update_first_frame_only,
    update_current_frame,
    no_prior,
    no_rectify,
};

inline Ablation ablation_from_string(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "no_update") return Ablation::no_update;
    if (s == "update_first_frame_only") return Ablation::update_first_frame_only;
    if (s == "update_current_frame") return Ablation::update_current_frame;
    if (s == "no_prior") return Ablation::no_prior;
    if (s == "no_rectify") return Ablation::no_rectify;
    throw std::invalid_argument("unknown ablation: " + s);
}

inline std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_update: return "no_update";
        case Ablation::update_first_frame_only: return "update_first_frame_only";
        case Ablation::update_current_frame: return "update_current_frame";
        case Ablation::no_prior: return "no_prior";
        case Ablation::no_rectify: return "no_rectify";
    }
    return "full";
}

struct FrameDiagnostics {
    int frame = 0;
    BoundingBox box;
    double confidence = 0.0;
    bool used_prior = false;
    int holistic_peaks = 0;
    int valid_part_peaks = 0;
    bool frozen = false;
    bool update_fired = false;
    std::string note;  // stage error, when a frame had to fall back
};

struct UpdateEvent {
    int frame = 0;
    int entry_frame = 0;
    double probability = 0.0;
    double pre_loss = 0.0;
    double post_loss = 0.0;
    bool reverted = false;
};

struct StageDumps {
    bool valid = false;
    HeatMap holistic_raw;
    HeatMap holistic_rect;
    std::array<HeatMap, 4> parts;
    bool has_saliency = false;
    SaliencyMap saliency;
};

constexpr int kRoiImageSize = 92;  // raster handed to the feature provider

class Tracker {
public:
    Tracker(TrackerConfig cfg, FeatureProvider& provider, Ablation ablation = Ablation::full)
        : cfg_(std::move(cfg)), provider_(provider), ablation_(ablation), rng_(cfg_.seed) {
        validate(cfg_);
        pool_.capacity = cfg_.pool_capacity;
        pool_.insert_ratio = cfg_.pool_insert_ratio;
    }

    FrameDiagnostics init(const Image& frame, const BoundingBox& gt) {
        if (t_ != 0) throw std::logic_error("Tracker::init called twice");
        if (gt.w < 8.0 || gt.h < 8.0)
            throw std::invalid_argument("init: target box needs at least 8 px per side");
        t_ = 1;
        color_ = frame.channels == 3;
        first_w_ = gt.w;
        first_h_ = gt.h;
        estimate_ = TargetEstimate{gt, 0.0, false};
        estimate_.box.scale = 1.0;

        const int tw = std::max(1, static_cast<int>(std::lround(gt.w)));
        const int th = std::max(1, static_cast<int>(std::lround(gt.h)));
        template_ = crop_resize(frame, gt.cx, gt.cy, gt.w, gt.h, tw, th);

        if (color_ && ablation_ != Ablation::no_prior) {
            const ShallowFeatureStack stack = extract_shallow_features(frame);
            prior_weights_ = learn_prior_weights(
                stack, box_to_map(estimate_.box, frame.width, frame.height), cfg_.lambda_s);
        }

        const RoiTransform roi = roi_for(gt.cx, gt.cy, estimate_.box, frame);
        const Image roi_img = crop_roi(frame, roi);
        auto [f4, f5] = provider_.provide(roi_img, t_);

        const BoundingBox map_box = to_map_box(estimate_.box, roi);
        const HeatMap m_ht =
            gaussian_map(map_box, roi.raster, roi.raster, cfg_.gaussian_sigma_factor);
        const std::array<BoundingBox, 4> quads = quadrants(map_box);
        std::array<HeatMap, 4> m_pt;
        for (int i = 0; i < 4; ++i)
            m_pt[static_cast<size_t>(i)] = gaussian_map(quads[static_cast<size_t>(i)], roi.raster,
                                                        roi.raster, cfg_.gaussian_sigma_factor);

        mask_h_ = make_mask(f5.stack, m_ht);
        for (int i = 0; i < 4; ++i)
            mask_p_[static_cast<size_t>(i)] = make_mask(f4.stack, m_pt[static_cast<size_t>(i)]);

        const ChannelStack h_in = apply_selection(f5.stack, mask_h_);
        const TrainSpec head_spec{cfg_.init_iterations, cfg_.head_learning_rate, cfg_.beta_w};
        hnet_ = HeadNet::create(h_in.channels, cfg_.head_hidden_channels, rng_,
                                cfg_.weight_init_std);
        train(hnet_, h_in, m_ht, head_spec);
        for (int i = 0; i < 4; ++i) {
            const ChannelStack p_in = apply_selection(f4.stack, mask_p_[static_cast<size_t>(i)]);
            pnets_[static_cast<size_t>(i)] = HeadNet::create(
                p_in.channels, cfg_.head_hidden_channels, rng_, cfg_.weight_init_std);
            train(pnets_[static_cast<size_t>(i)], p_in, m_pt[static_cast<size_t>(i)], head_spec);
        }

        // Frame-1 confidence anchors the scale compensation for the rest of
        // the run; the first-frame estimate itself stays at the ground truth.
        const HeatMap mh = head_forward(hnet_, h_in);
        LocalizeParams params{first_w_, first_h_, -1.0, -1.0};
        const TargetEstimate e1 = localize(mh, estimate_, roi, cfg_, params, rng_);
        first_confidence_ = std::max(e1.confidence, 1e-12);
        estimate_.confidence = first_confidence_;
        push_confidence(first_confidence_);

        first_entry_ = make_entry(t_, h_in, estimate_.box, roi, first_confidence_);
        try_insert(pool_, first_entry_);

        FrameDiagnostics diag;
        diag.frame = t_;
        diag.box = estimate_.box;
        diag.confidence = first_confidence_;
        return diag;
    }

    FrameDiagnostics track(const Image& frame) {
        if (t_ == 0) throw std::logic_error("Tracker::track before init");
        ++t_;
        FrameDiagnostics diag;
        diag.frame = t_;
        dumps_ = StageDumps{};
        const TargetEstimate prev = estimate_;
        try {
            double roi_cx = prev.box.cx, roi_cy = prev.box.cy;
            if (ablation_ != Ablation::no_prior && color_ && frame.channels == 3) {
                const RoiDecision dec = run_prior_stage(frame, prev);
                diag.used_prior = dec.used_prior;
                if (dec.used_prior) {
                    roi_cx = dec.cx;
                    roi_cy = dec.cy;
                }
            }

            const RoiTransform roi = roi_for(roi_cx, roi_cy, prev.box, frame);
            const Image roi_img = crop_roi(frame, roi);
            auto [f4, f5] = provider_.provide(roi_img, t_);
            const ChannelStack h_in = apply_selection(f5.stack, mask_h_);

            const HeatMap mh = head_forward(hnet_, h_in);
            std::array<HeatMap, 4> mp;
            for (int i = 0; i < 4; ++i)
                mp[static_cast<size_t>(i)] = head_forward(
                    pnets_[static_cast<size_t>(i)],
                    apply_selection(f4.stack, mask_p_[static_cast<size_t>(i)]));

            std::vector<Peak> hp = holistic_hypotheses(mh, cfg_.peak_keep_ratio);
            diag.holistic_peaks = static_cast<int>(hp.size());
            diag.raw_peaks = static_cast<int>(find_peaks(mh, cfg_.peak_keep_ratio).size());
            HeatMap rect;
            if (ablation_ == Ablation::no_rectify) {
                rect = mh;
            } else {
                RectifyInfo info = detail::rectify_with_peaks(mh, hp, mp, cfg_.peak_keep_ratio,
                                                              cfg_.rectify_min_peaks);
                diag.valid_part_peaks = info.valid_part_peaks;
                rect = std::move(info.map);
            }

            LocalizeParams params{first_w_, first_h_, first_confidence_, freeze_threshold()};
            const TargetEstimate est = localize(rect, prev, roi, cfg_, params, rng_);
            estimate_ = est;
            diag.confidence = est.confidence;
            diag.frozen = est.frozen;

            if (!est.frozen) {
                push_confidence(est.confidence);
                PoolEntry entry = make_entry(t_, h_in, est.box, roi, est.confidence);
                try_insert(pool_, entry);
                if (ablation_ != Ablation::no_update)
                    run_update_stage(entry, diag);
            }

            if (keep_dumps_) {
                dumps_.valid = true;
                dumps_.holistic_raw = mh;
                dumps_.holistic_rect = rect;
                dumps_.parts = mp;
            }
        } catch (const std::exception& e) {
            estimate_ = prev;
            estimate_.frozen = true;
            diag.frozen = true;
            diag.note = e.what();
        }
        diag.box = estimate_.box;
        return diag;
    }

    const TargetEstimate& estimate() const { return estimate_; }
    int frame_index() const { return t_; }
    const std::vector<UpdateEvent>& update_events() const { return events_; }
    const HeadNet& hnet() const { return hnet_; }
    const HeadNet& pnet(int i) const { return pnets_.at(static_cast<size_t>(i)); }
    const SelectionMask& holistic_mask() const { return mask_h_; }
    const SelectionMask& part_mask(int i) const { return mask_p_.at(static_cast<size_t>(i)); }
    const PositiveSamplePool& pool() const { return pool_; }
    const Image& target_template() const { return template_; }
    void set_keep_dumps(bool v) { keep_dumps_ = v; }
    const StageDumps& dumps() const { return dumps_; }

private:
    TrackerConfig cfg_;
    FeatureProvider& provider_;
    Ablation ablation_;
    Rng rng_;
    int t_ = 0;
    bool color_ = false;
    double first_w_ = 0, first_h_ = 0;
    double first_confidence_ = 0;
    Image template_;
    PriorWeights prior_weights_{};
    SelectionMask mask_h_;
    std::array<SelectionMask, 4> mask_p_;
    HeadNet hnet_;
    std::array<HeadNet, 4> pnets_;
    TargetEstimate estimate_;
    PositiveSamplePool pool_;
    PoolEntry first_entry_;
    std::deque<double> recent_conf_;
    std::vector<UpdateEvent> events_;
    bool keep_dumps_ = false;
    StageDumps dumps_;

    static std::array<BoundingBox, 4> quadrants(const BoundingBox& box) {
        const double qw = box.w / 2.0, qh = box.h / 2.0;
        return {BoundingBox{box.cx - qw / 2, box.cy - qh / 2, qw, qh, box.scale},
                BoundingBox{box.cx + qw / 2, box.cy - qh / 2, qw, qh, box.scale},
                BoundingBox{box.cx - qw / 2, box.cy + qh / 2, qw, qh, box.scale},
                BoundingBox{box.cx + qw / 2, box.cy + qh / 2, qw, qh, box.scale}};
    }

    RoiTransform roi_for(double cx, double cy, const BoundingBox& box, const Image& frame) const {
        RoiTransform roi;
        roi.size = std::max(16.0, cfg_.roi_scale * std::max(box.w, box.h));
        roi.raster = kFeatureMapSize;
        const double half = 0.5 * roi.size;
        roi.cx = (roi.size >= frame.width) ? (frame.width - 1) / 2.0
                                           : std::clamp(cx, half - 0.5, frame.width - 0.5 - half);
        roi.cy = (roi.size >= frame.height) ? (frame.height - 1) / 2.0
                                            : std::clamp(cy, half - 0.5, frame.height - 0.5 - half);
        return roi;
    }

    static Image crop_roi(const Image& frame, const RoiTransform& roi) {
        return crop_resize(frame, roi.cx, roi.cy, roi.size, roi.size, kRoiImageSize,
                           kRoiImageSize);
    }

    BoundingBox to_map_box(const BoundingBox& box, const RoiTransform& roi) const {
        BoundingBox m;
        m.cx = std::clamp(roi.map_x(box.cx), 0.0, static_cast<double>(roi.raster - 1));
        m.cy = std::clamp(roi.map_y(box.cy), 0.0, static_cast<double>(roi.raster - 1));
        m.w = box.w * roi.zoom();
        m.h = box.h * roi.zoom();
        m.scale = box.scale;
        return m;
    }

    SelectionMask make_mask(const ChannelStack& stack, const HeatMap& target) {
        SelectorNet sel =
            SelectorNet::create(stack.channels, cfg_.dropout_ratio, rng_, cfg_.weight_init_std);
        const TrainSpec spec{cfg_.selector_iterations, cfg_.selector_learning_rate, 0.0};
        train_selector(sel, stack, target, spec, rng_);
        return select_top_features(score_feature_saliency(sel, stack, target), cfg_.n_select);
    }

    PoolEntry make_entry(int frame_idx, const ChannelStack& h_in, const BoundingBox& box,
                         const RoiTransform& roi, double confidence) const {
        PoolEntry e;
        e.frame = frame_idx;
        e.features = h_in;
        e.box = box;
        const BoundingBox mb = to_map_box(box, roi);
        e.target = gaussian_map(mb, roi.raster, roi.raster, cfg_.gaussian_sigma_factor);
        e.fg_mask.assign(static_cast<size_t>(roi.raster) * roi.raster, 0.0);
        for (int y = 0; y < roi.raster; ++y)
            for (int x = 0; x < roi.raster; ++x)
                if (x >= mb.left() && x <= mb.right() && y >= mb.top() && y <= mb.bottom())
                    e.fg_mask[static_cast<size_t>(y) * roi.raster + x] = 1.0;
        e.confidence = confidence;
        return e;
    }

    void push_confidence(double c) {
        recent_conf_.push_back(c);
        while (static_cast<int>(recent_conf_.size()) > cfg_.freeze_window)
            recent_conf_.pop_front();
    }

    double freeze_threshold() const {
        if (recent_conf_.empty()) return -1.0;
        std::vector<double> v(recent_conf_.begin(), recent_conf_.end());
        std::sort(v.begin(), v.end());
        const size_t n = v.size();
        const double median = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
        return cfg_.freeze_factor * median;
    }

    RoiDecision run_prior_stage(const Image& frame, const TargetEstimate& prev) {
        const ShallowFeatureStack stack = extract_shallow_features(frame);
        const double pcx = std::clamp(detail::resample_coord(prev.box.cx, stack.width, frame.width),
                                      0.0, static_cast<double>(stack.width - 1));
        const double pcy = std::clamp(
            detail::resample_coord(prev.box.cy, stack.height, frame.height), 0.0,
            static_cast<double>(stack.height - 1));
        SaliencyMap smap = build_saliency_map(stack, prior_weights_, pcx, pcy, cfg_.sigma_b,
                                              cfg_.delta_s, cfg_.center_prior_literal);
        const BoundingBox mb = box_to_map(prev.box, frame.width, frame.height);
        const double sigma_s = cfg_.sigma_s_factor * mb.w * mb.h;
        std::vector<RegionCandidate> cands = extract_candidates(smap, frame, prev.box, sigma_s);
        const RoiDecision dec =
            decide_roi(cands, template_, prev.box.cx, prev.box.cy, cfg_.sigma_c, cfg_.delta_c);
        if (keep_dumps_) {
            dumps_.saliency = std::move(smap);
            dumps_.has_saliency = true;
        }
        return dec;
    }

    // The ablation switches reroute only the positive-sample source; the
    // firing conditions are shared so every variant updates at the same
    // opportunities.
    void run_update_stage(const PoolEntry& current, FrameDiagnostics& diag) {
        const UpdateDecision d = check_update_conditions(pool_, current.confidence,
                                                         diag.raw_peaks, t_, cfg_, rng_);
        if (!d.fire) return;
        const PoolEntry* positive = &pool_.entries[static_cast<size_t>(d.entry_index)];
        if (ablation_ == Ablation::update_first_frame_only) positive = &first_entry_;
        if (ablation_ == Ablation::update_current_frame) positive = &current;
        const FinetuneResult r = finetune_hnet(hnet_, *positive, current, cfg_);
        events_.push_back(
            {t_, positive->frame, d.probability, r.pre_loss, r.post_loss, r.reverted});
        diag.update_fired = true;
    }
};

}  // namespace sdt
