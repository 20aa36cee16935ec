/*
 * Shallow-cue prior: a 19-channel low-level feature stack on a fixed 200x200
 * raster, ridge-regressed channel weights learned once on the first frame, a
 * center-penalized saliency map, connected-region candidates, and a template
 * match that decides where the tracker's ROI goes.
 *
 * Channel layout (all max-normalized to [0,1], constant channels become 0):
 *   0..11  oriented band-pass energy, scale-major: scale s in {0,1,2} on a
 *          Gaussian pyramid (200/100/50), orientation o in {0..3} with
 *          gradient direction o*45 degrees (o=2 responds to horizontal
 *          stripes, i.e. intensity varying along y)
 *   12     pyramid lowpass residual
 *   13..16 opponent colors R, G, B, Y
 *   17     intensity
 *   18     skin likelihood (fixed chroma membership, no learning)
 */
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>

#include "sdt/core.hpp"

namespace sdt {

constexpr int kPriorMapSize = 200;

namespace shallow {
constexpr int kOrientations = 4;
constexpr int kScales = 3;
constexpr int kLowpass = 12;
constexpr int kR = 13, kG = 14, kB = 15, kY = 16, kI = 17, kSkin = 18;
constexpr int kCount = 19;
constexpr int oriented_index(int scale, int orientation) {
    return scale * kOrientations + orientation;
}
constexpr double kOrientedSigma = 1.2;  // base Gaussian scale of the band-pass kernels
constexpr int kOrientedKernelSize = 9;
}  // namespace shallow

namespace detail {

// Separable binomial [1,4,6,4,1]/16 smoothing with replicated borders.
inline std::vector<double> binomial_smooth(const std::vector<double>& src, int w, int h) {
    static constexpr double taps[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -2; t <= 2; ++t)
                acc += taps[t + 2] * src[static_cast<size_t>(y) * w + std::clamp(x + t, 0, w - 1)];
            tmp[static_cast<size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -2; t <= 2; ++t)
                acc += taps[t + 2] * tmp[static_cast<size_t>(std::clamp(y + t, 0, h - 1)) * w + x];
            out[static_cast<size_t>(y) * w + x] = acc;
        }
    return out;
}

inline std::vector<double> downsample2(const std::vector<double>& src, int w, int h, int& dw,
                                       int& dh) {
    std::vector<double> smooth = binomial_smooth(src, w, h);
    dw = (w + 1) / 2;
    dh = (h + 1) / 2;
    std::vector<double> out(static_cast<size_t>(dw) * dh);
    for (int y = 0; y < dh; ++y)
        for (int x = 0; x < dw; ++x)
            out[static_cast<size_t>(y) * dw + x] = smooth[static_cast<size_t>(2 * y) * w + 2 * x];
    return out;
}

inline std::vector<double> conv2_replicate(const std::vector<double>& src, int w, int h,
                                           const std::vector<double>& kernel, int ks) {
    const int r = ks / 2;
    std::vector<double> out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int ky = 0; ky < ks; ++ky) {
                const int sy = std::clamp(y + ky - r, 0, h - 1);
                for (int kx = 0; kx < ks; ++kx) {
                    const int sx = std::clamp(x + kx - r, 0, w - 1);
                    acc += kernel[static_cast<size_t>(ky) * ks + kx] *
                           src[static_cast<size_t>(sy) * w + sx];
                }
            }
            out[static_cast<size_t>(y) * w + x] = acc;
        }
    return out;
}

// Second derivative of a Gaussian along direction theta (gradient direction),
// zero-mean and L1-normalized so responses are comparable across orientations.
inline std::vector<double> oriented_kernel(double theta, double sigma, int ks) {
    const int r = ks / 2;
    const double ct = std::cos(theta), st = std::sin(theta);
    std::vector<double> k(static_cast<size_t>(ks) * ks);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double u = dx * ct + dy * st;
            const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            k[static_cast<size_t>(dy + r) * ks + (dx + r)] =
                (u * u / (sigma * sigma * sigma * sigma) - 1.0 / (sigma * sigma)) * g;
        }
    const double mean = std::accumulate(k.begin(), k.end(), 0.0) / static_cast<double>(k.size());
    double l1 = 0.0;
    for (double& v : k) {
        v -= mean;
        l1 += std::abs(v);
    }
    for (double& v : k) v /= l1;
    return k;
}

inline void max_normalize(double* v, size_t n) {
    double lo = v[0], hi = v[0];
    for (size_t i = 1; i < n; ++i) {
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
    }
    if (hi <= 0.0 || hi == lo) {
        std::fill(v, v + n, 0.0);
        return;
    }
    for (size_t i = 0; i < n; ++i) v[i] = std::max(v[i], 0.0) / hi;
}

}  // namespace detail

using ShallowFeatureStack = ChannelStack;

inline ShallowFeatureStack extract_shallow_features(const Image& frame) {
    if (frame.channels != 3)
        throw std::invalid_argument("prior map requires 3 channels");
    const int n = kPriorMapSize;
    const Image img = resize_bilinear(frame, n, n);
    ShallowFeatureStack stack(shallow::kCount, n, n);

    std::vector<double> intensity(static_cast<size_t>(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const float* px = &img.data[(static_cast<size_t>(y) * n + x) * 3];
            intensity[static_cast<size_t>(y) * n + x] = (px[0] + px[1] + px[2]) / 3.0;
        }

    // Oriented band-pass energy over a 3-level Gaussian pyramid.
    std::vector<std::vector<double>> levels = {intensity};
    std::vector<int> lw = {n}, lh = {n};
    for (int s = 1; s < shallow::kScales; ++s) {
        int dw = 0, dh = 0;
        levels.push_back(detail::downsample2(levels.back(), lw.back(), lh.back(), dw, dh));
        lw.push_back(dw);
        lh.push_back(dh);
    }
    for (int s = 0; s < shallow::kScales; ++s) {
        for (int o = 0; o < shallow::kOrientations; ++o) {
            const auto kernel = detail::oriented_kernel(o * std::numbers::pi / 4.0,
                                                        shallow::kOrientedSigma,
                                                        shallow::kOrientedKernelSize);
            auto resp = detail::conv2_replicate(levels[s], lw[s], lh[s], kernel,
                                                shallow::kOrientedKernelSize);
            for (double& v : resp) v = std::abs(v);
            HeatMap m(lw[s], lh[s]);
            m.values = std::move(resp);
            HeatMap up = resize_bilinear(m, n, n);
            double* dst = stack.plane(shallow::oriented_index(s, o));
            std::copy(up.values.begin(), up.values.end(), dst);
            detail::max_normalize(dst, stack.plane_size());
        }
    }
    {
        auto low = detail::binomial_smooth(levels.back(), lw.back(), lh.back());
        HeatMap m(lw.back(), lh.back());
        m.values = std::move(low);
        HeatMap up = resize_bilinear(m, n, n);
        double* dst = stack.plane(shallow::kLowpass);
        std::copy(up.values.begin(), up.values.end(), dst);
        detail::max_normalize(dst, stack.plane_size());
    }

    // Opponent colors, intensity, skin chroma membership.
    double* pr = stack.plane(shallow::kR);
    double* pg = stack.plane(shallow::kG);
    double* pb = stack.plane(shallow::kB);
    double* py = stack.plane(shallow::kY);
    double* pi = stack.plane(shallow::kI);
    double* ps = stack.plane(shallow::kSkin);
    for (size_t p = 0; p < stack.plane_size(); ++p) {
        const float* px = &img.data[p * 3];
        const double r = px[0], g = px[1], b = px[2];
        pr[p] = std::max(0.0, r - (g + b) / 2.0);
        pg[p] = std::max(0.0, g - (r + b) / 2.0);
        pb[p] = std::max(0.0, b - (r + g) / 2.0);
        py[p] = std::max(0.0, (r + g) / 2.0 - std::abs(r - g) / 2.0 - b);
        pi[p] = (r + g + b) / 3.0;
        // Chroma coordinates on the usual 0..255 scale; the skin cluster sits
        // around Cb 102, Cr 153 and falls off as a Gaussian membership.
        const double cb = 128.0 + 255.0 * (-0.168736 * r - 0.331264 * g + 0.5 * b);
        const double cr = 128.0 + 255.0 * (0.5 * r - 0.418688 * g - 0.081312 * b);
        const double dcb = (cb - 102.0) / 25.0;
        const double dcr = (cr - 153.0) / 20.0;
        ps[p] = std::exp(-0.5 * (dcb * dcb + dcr * dcr));
    }
    for (int c : {shallow::kR, shallow::kG, shallow::kB, shallow::kY, shallow::kI, shallow::kSkin})
        detail::max_normalize(stack.plane(c), stack.plane_size());
    return stack;
}

// ---------------------------------------------------------------------------
// Ridge weights, learned once on the first frame and then frozen.
// ---------------------------------------------------------------------------

struct PriorWeights {
    std::array<double, shallow::kCount> w{};
};

// Maps a frame-coordinate box onto the fixed feature raster.
inline BoundingBox box_to_map(const BoundingBox& box, int frame_w, int frame_h) {
    BoundingBox m;
    m.cx = detail::resample_coord(box.cx, kPriorMapSize, frame_w);
    m.cy = detail::resample_coord(box.cy, kPriorMapSize, frame_h);
    m.w = box.w * kPriorMapSize / frame_w;
    m.h = box.h * kPriorMapSize / frame_h;
    m.scale = box.scale;
    return m;
}

namespace detail {

// Cholesky solve of a symmetric positive definite system; returns false when
// a pivot collapses (singular or indefinite input).
template <size_t N>
inline bool solve_spd(std::array<std::array<double, N>, N> a, std::array<double, N>& x,
                      const std::array<double, N>& b) {
    double scale = 0.0;
    for (size_t i = 0; i < N; ++i) scale = std::max(scale, std::abs(a[i][i]));
    const double tiny = std::max(scale, 1.0) * 1e-14;
    for (size_t i = 0; i < N; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double s = a[i][j];
            for (size_t k = 0; k < j; ++k) s -= a[i][k] * a[j][k];
            if (i == j) {
                if (s <= tiny) return false;
                a[i][i] = std::sqrt(s);
            } else {
                a[i][j] = s / a[j][j];
            }
        }
    }
    // forward then backward substitution
    std::array<double, N> y{};
    for (size_t i = 0; i < N; ++i) {
        double s = b[i];
        for (size_t k = 0; k < i; ++k) s -= a[i][k] * y[k];
        y[i] = s / a[i][i];
    }
    for (size_t ii = N; ii-- > 0;) {
        double s = y[ii];
        for (size_t k = ii + 1; k < N; ++k) s -= a[k][ii] * x[k];
        x[ii] = s / a[ii][ii];
    }
    return true;
}

}  // namespace detail

// gt_box is expressed on the feature raster (see box_to_map). The target is a
// binary mask of the box; weights solve the ridge normal equations.
inline PriorWeights learn_prior_weights(const ShallowFeatureStack& stack, const BoundingBox& gt_box,
                                        double lambda_s) {
    if (stack.channels != shallow::kCount)
        throw std::invalid_argument("learn_prior_weights: expected 19 channels");
    if (lambda_s < 0.0) throw std::invalid_argument("learn_prior_weights: lambda_s must be >= 0");
    const int w = stack.width, h = stack.height;
    std::vector<uint8_t> mask(static_cast<size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (x >= gt_box.left() && x <= gt_box.right() && y >= gt_box.top() &&
                y <= gt_box.bottom())
                mask[static_cast<size_t>(y) * w + x] = 1;

    constexpr size_t N = shallow::kCount;
    std::array<std::array<double, N>, N> gram{};
    std::array<double, N> rhs{};
    for (size_t i = 0; i < N; ++i) {
        const double* fi = stack.plane(static_cast<int>(i));
        for (size_t j = 0; j <= i; ++j) {
            const double* fj = stack.plane(static_cast<int>(j));
            double s = 0.0;
            for (size_t p = 0; p < stack.plane_size(); ++p) s += fi[p] * fj[p];
            gram[i][j] = gram[j][i] = s;
        }
        double s = 0.0;
        for (size_t p = 0; p < stack.plane_size(); ++p)
            if (mask[p]) s += fi[p];
        rhs[i] = s;
    }
    for (size_t i = 0; i < N; ++i) gram[i][i] += lambda_s;

    PriorWeights out;
    std::array<double, N> x{};
    if (!detail::solve_spd<N>(gram, x, rhs))
        throw std::runtime_error(
            "learn_prior_weights: singular normal equations; use lambda_s > 0");
    std::copy(x.begin(), x.end(), out.w.begin());
    return out;
}

// ---------------------------------------------------------------------------
// Saliency map with center penalty.
// ---------------------------------------------------------------------------

struct SaliencyMap {
    HeatMap combined;              // raw weighted channel sum
    HeatMap penalized;             // center-weighted, clamped, max-normalized
    std::vector<uint8_t> binary;   // thresholded penalized map
    int width = 0, height = 0;
    double threshold = 0.0;
};

// The penalty weight decreases with distance from the previous center by
// default; `literal_growing` flips it to increase instead (kept for study).
inline SaliencyMap build_saliency_map(const ShallowFeatureStack& stack, const PriorWeights& weights,
                                      double prev_cx, double prev_cy, double sigma_b,
                                      double delta_s, bool literal_growing = false) {
    const int w = stack.width, h = stack.height;
    if (prev_cx < 0 || prev_cx > w - 1 || prev_cy < 0 || prev_cy > h - 1)
        throw std::invalid_argument("build_saliency_map: previous center outside the map");
    SaliencyMap out;
    out.width = w;
    out.height = h;
    out.threshold = sigma_b;
    out.combined = HeatMap(w, h);
    for (int c = 0; c < stack.channels; ++c) {
        const double wc = weights.w[c];
        if (wc == 0.0) continue;
        const double* f = stack.plane(c);
        for (size_t p = 0; p < stack.plane_size(); ++p) out.combined.values[p] += wc * f[p];
    }

    double max_dis = 0.0;
    for (int cy : {0, h - 1})
        for (int cx : {0, w - 1})
            max_dis = std::max(max_dis, std::hypot(cx - prev_cx, cy - prev_cy));
    out.penalized = HeatMap(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double rel = std::hypot(x - prev_cx, y - prev_cy) / max_dis;
            const double c = delta_s * (literal_growing ? rel : 1.0 - rel);
            out.penalized.values[static_cast<size_t>(y) * w + x] =
                c * out.combined.values[static_cast<size_t>(y) * w + x];
        }
    detail::max_normalize(out.penalized.values.data(), out.penalized.values.size());

    out.binary.resize(out.penalized.values.size());
    for (size_t p = 0; p < out.binary.size(); ++p) {
        const double v = out.penalized.values[p];
        out.binary[p] = (sigma_b > 0.0) ? (v >= sigma_b) : (v > 0.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Connected-region candidates (run-based two-pass labeling, 8-connectivity).
// ---------------------------------------------------------------------------

struct RegionCandidate {
    std::vector<uint32_t> pixels;  // indices on the feature raster
    double centroid_x = 0, centroid_y = 0;  // feature raster coords
    double frame_x = 0, frame_y = 0;        // mapped back to frame coords
    Image patch;                            // crop at last-box dimensions
    double confidence = 0.0;
};

namespace detail {

struct Run {
    int y, xs, xe;
    int label;
};

inline int find_root(std::vector<int>& parent, int i) {
    while (parent[i] != i) {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    return i;
}

}  // namespace detail

inline std::vector<RegionCandidate> extract_candidates(const SaliencyMap& smap, const Image& frame,
                                                       const BoundingBox& last_box,
                                                       double sigma_s) {
    const int w = smap.width, h = smap.height;
    std::vector<detail::Run> runs;
    std::vector<int> parent;
    size_t row_start = 0, prev_start = 0, prev_end = 0;
    for (int y = 0; y < h; ++y) {
        row_start = runs.size();
        int x = 0;
        while (x < w) {
            if (!smap.binary[static_cast<size_t>(y) * w + x]) {
                ++x;
                continue;
            }
            int xs = x;
            while (x < w && smap.binary[static_cast<size_t>(y) * w + x]) ++x;
            detail::Run run{y, xs, x - 1, static_cast<int>(parent.size())};
            parent.push_back(run.label);
            // union with 8-connected runs from the previous row
            for (size_t i = prev_start; i < prev_end; ++i) {
                if (runs[i].xe + 1 < run.xs || runs[i].xs - 1 > run.xe) continue;
                const int a = detail::find_root(parent, run.label);
                const int b = detail::find_root(parent, runs[i].label);
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }
            runs.push_back(run);
        }
        prev_start = row_start;
        prev_end = runs.size();
    }

    struct Accum {
        long long area = 0, sx = 0, sy = 0;
        std::vector<uint32_t> pixels;
    };
    std::map<int, Accum> comps;
    for (const auto& run : runs) {
        Accum& a = comps[detail::find_root(parent, run.label)];
        const long long len = run.xe - run.xs + 1;
        a.area += len;
        a.sx += static_cast<long long>(run.xs + run.xe) * len / 2;
        a.sy += static_cast<long long>(run.y) * len;
        for (int x = run.xs; x <= run.xe; ++x)
            a.pixels.push_back(static_cast<uint32_t>(run.y) * w + x);
    }

    std::vector<RegionCandidate> out;
    for (auto& [label, a] : comps) {
        if (static_cast<double>(a.area) < sigma_s) continue;
        RegionCandidate cand;
        cand.pixels = std::move(a.pixels);
        cand.centroid_x = static_cast<double>(a.sx) / a.area;
        cand.centroid_y = static_cast<double>(a.sy) / a.area;
        cand.frame_x = detail::resample_coord(cand.centroid_x, frame.width, w);
        cand.frame_y = detail::resample_coord(cand.centroid_y, frame.height, h);
        const int pw = std::max(1, static_cast<int>(std::lround(last_box.w)));
        const int ph = std::max(1, static_cast<int>(std::lround(last_box.h)));
        // keep the crop window inside the frame
        const double cx = std::clamp(cand.frame_x, last_box.w / 2.0,
                                     std::max(last_box.w / 2.0, frame.width - last_box.w / 2.0));
        const double cy = std::clamp(cand.frame_y, last_box.h / 2.0,
                                     std::max(last_box.h / 2.0, frame.height - last_box.h / 2.0));
        cand.patch = crop_resize(frame, cx, cy, last_box.w, last_box.h, pw, ph);
        out.push_back(std::move(cand));
    }
    return out;
}

// ---------------------------------------------------------------------------
// ROI decision by template match.
// ---------------------------------------------------------------------------

struct RoiDecision {
    double cx = 0, cy = 0;
    bool used_prior = false;
    double confidence = 0.0;
    int winner = -1;
};

// Matches scoring at least this fraction of the best count as ties; the tie
// resolves toward the previous center, so a lookalike elsewhere in the frame
// cannot steal the ROI from the tracked object on pixel noise. The ratio form
// gives a fixed slack in squared-difference units at any confidence level.
inline constexpr double kRoiTieRatio = 0.8;

// Similarity c = exp(-delta_c * d^2) with d^2 the mean squared pixel
// difference on the template raster; candidates below sigma_c fall back to
// the previous center.
inline RoiDecision decide_roi(std::vector<RegionCandidate>& cands, const Image& tmpl,
                              double last_cx, double last_cy, double sigma_c, double delta_c) {
    RoiDecision out;
    out.cx = last_cx;
    out.cy = last_cy;
    double best = 0.0;
    for (RegionCandidate& cand : cands) {
        const Image patch =
            (cand.patch.width == tmpl.width && cand.patch.height == tmpl.height)
                ? cand.patch
                : resize_bilinear(cand.patch, tmpl.width, tmpl.height);
        if (patch.channels != tmpl.channels)
            throw std::invalid_argument("decide_roi: channel mismatch with template");
        double ss = 0.0;
        for (size_t p = 0; p < tmpl.data.size(); ++p) {
            const double d = static_cast<double>(patch.data[p]) - tmpl.data[p];
            ss += d * d;
        }
        const double d2 = ss / static_cast<double>(tmpl.data.size());
        cand.confidence = std::exp(-delta_c * d2);
        best = std::max(best, cand.confidence);
    }
    for (size_t i = 0; i < cands.size(); ++i) {
        if (cands[i].confidence < best * kRoiTieRatio) continue;
        bool better = out.winner < 0;
        if (!better) {
            const auto& cur = cands[static_cast<size_t>(out.winner)];
            const double di = std::hypot(cands[i].frame_x - last_cx, cands[i].frame_y - last_cy);
            const double dc = std::hypot(cur.frame_x - last_cx, cur.frame_y - last_cy);
            better = di < dc || (di == dc && cands[i].confidence > cur.confidence);
        }
        if (better) {
            out.winner = static_cast<int>(i);
            out.confidence = cands[i].confidence;
        }
    }
    if (out.winner >= 0 && out.confidence > sigma_c) {
        out.used_prior = true;
        out.cx = cands[static_cast<size_t>(out.winner)].frame_x;
        out.cy = cands[static_cast<size_t>(out.winner)].frame_y;
    }
    return out;
}

}  // namespace sdt
