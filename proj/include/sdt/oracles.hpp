/*
 * Independent reference implementations used to cross-check the production
 * code paths, plus the selftest runner exposed on the CLI. Everything here
 * is written the slow, obvious way on purpose and shares no helpers with the
 * implementations under test.
 */
#pragma once

#include <functional>
#include <iostream>

#include "sdt/convnet.hpp"
#include "sdt/core.hpp"
#include "sdt/prior.hpp"
#include "sdt/rng.hpp"
#include "sdt/tracker.hpp"

namespace sdt::oracles {

// Direct quadruple-loop convolution with zero padding and activation.
inline ChannelStack naive_conv(const ConvLayer& layer, const ChannelStack& in) {
    ChannelStack out(layer.out_ch, in.width, in.height);
    for (int oc = 0; oc < layer.out_ch; ++oc)
        for (int y = 0; y < in.height; ++y)
            for (int x = 0; x < in.width; ++x) {
                double acc = layer.bias[static_cast<size_t>(oc)];
                for (int ic = 0; ic < layer.in_ch; ++ic)
                    for (int ky = 0; ky < layer.kh; ++ky)
                        for (int kx = 0; kx < layer.kw; ++kx) {
                            const int sy = y + ky - layer.pad;
                            const int sx = x + kx - layer.pad;
                            if (sy < 0 || sy >= in.height || sx < 0 || sx >= in.width) continue;
                            acc += layer.kernel(oc, ic)[ky * layer.kw + kx] *
                                   in.plane(ic)[static_cast<size_t>(sy) * in.width + sx];
                        }
                if (layer.act == Activation::relu) acc = std::max(acc, 0.0);
                out.plane(oc)[static_cast<size_t>(y) * in.width + x] = acc;
            }
    return out;
}

// Gauss-Jordan elimination with partial pivoting on a dense system.
inline std::vector<double> gauss_jordan_solve(std::vector<std::vector<double>> a,
                                              std::vector<double> b) {
    const size_t n = b.size();
    for (size_t col = 0; col < n; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < 1e-12)
            throw std::runtime_error("gauss_jordan_solve: singular matrix");
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        const double d = a[col][col];
        for (size_t c = 0; c < n; ++c) a[col][c] /= d;
        b[col] /= d;
        for (size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            if (f == 0.0) continue;
            for (size_t c = 0; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    return b;
}

// Stack-based flood fill over a binary map, 8-connectivity. Returns per-pixel
// component labels (-1 for false pixels) and the component count.
inline std::pair<std::vector<int>, int> flood_fill_components(const std::vector<uint8_t>& binary,
                                                              int w, int h) {
    std::vector<int> labels(binary.size(), -1);
    int count = 0;
    std::vector<size_t> stack;
    for (size_t start = 0; start < binary.size(); ++start) {
        if (!binary[start] || labels[start] != -1) continue;
        const int id = count++;
        stack.assign(1, start);
        labels[start] = id;
        while (!stack.empty()) {
            const size_t p = stack.back();
            stack.pop_back();
            const int x = static_cast<int>(p) % w, y = static_cast<int>(p) / w;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                    const size_t q = static_cast<size_t>(ny) * w + nx;
                    if (binary[q] && labels[q] == -1) {
                        labels[q] = id;
                        stack.push_back(q);
                    }
                }
        }
    }
    return {labels, count};
}

// Regional maxima by exhaustive neighborhood comparison: equal-value
// 8-connected clusters (union-find) that contain no pixel with a strictly
// greater neighbor, restricted to positive values. Returns (x, y, value)
// with x, y the cluster centroid.
struct OraclePeak {
    double x, y, value;
};

inline std::vector<OraclePeak> brute_regional_maxima(const HeatMap& map) {
    const int w = map.width, h = map.height;
    const size_t n = map.values.size();
    std::vector<size_t> parent(n);
    for (size_t i = 0; i < n; ++i) parent[i] = i;
    std::function<size_t(size_t)> find = [&](size_t i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    };
    std::vector<uint8_t> has_greater(n, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t p = static_cast<size_t>(y) * w + x;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                    const size_t q = static_cast<size_t>(ny) * w + nx;
                    if (map.values[q] > map.values[p]) has_greater[p] = 1;
                    if (map.values[q] == map.values[p]) parent[find(p)] = find(q);
                }
        }
    struct Acc {
        double sx = 0, sy = 0;
        int count = 0;
        bool maximal = true;
        double value = 0;
    };
    std::map<size_t, Acc> clusters;
    for (size_t p = 0; p < n; ++p) {
        Acc& a = clusters[find(p)];
        a.sx += static_cast<double>(p % w);
        a.sy += static_cast<double>(p / w);
        a.count += 1;
        a.value = map.values[p];
        if (has_greater[p]) a.maximal = false;
    }
    std::vector<OraclePeak> out;
    for (const auto& [root, a] : clusters)
        if (a.maximal && a.value > 0.0)
            out.push_back({a.sx / a.count, a.sy / a.count, a.value});
    return out;
}

// Plain bilinear sampling with border clamping, for resampling checks.
inline double bilinear_sample(const std::vector<double>& v, int w, int h, double fx, double fy) {
    const double cx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
    const double cy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const int x0 = static_cast<int>(std::floor(cx));
    const int y0 = static_cast<int>(std::floor(cy));
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ax = cx - x0, ay = cy - y0;
    const double top = (1.0 - ax) * v[static_cast<size_t>(y0) * w + x0] +
                       ax * v[static_cast<size_t>(y0) * w + x1];
    const double bot = (1.0 - ax) * v[static_cast<size_t>(y1) * w + x0] +
                       ax * v[static_cast<size_t>(y1) * w + x1];
    return (1.0 - ay) * top + ay * bot;
}

// ---------------------------------------------------------------------------
// Selftest: quick property sweeps runnable from the CLI without a test
// framework. Returns the number of failed checks and prints one line each.
// ---------------------------------------------------------------------------

inline int selftest_run_all(std::ostream& os = std::cout) {
    int failures = 0;
    const auto check = [&](const std::string& name, bool ok) {
        os << (ok ? "ok   " : "FAIL ") << name << "\n";
        if (!ok) ++failures;
    };

    Rng rng(20240915);

    {
        bool ok = true;
        for (int trial = 0; trial < 10 && ok; ++trial) {
            ConvLayer layer(2, 3, trial % 2 == 0 ? 3 : 5,
                            trial % 2 == 0 ? Activation::relu : Activation::identity);
            for (double& v : layer.weights) v = rng.normal();
            for (double& v : layer.bias) v = rng.normal();
            ChannelStack in(3, 9, 7);
            for (double& v : in.data) v = rng.normal();
            const ChannelStack fast = conv_forward(layer, in);
            const ChannelStack slow = naive_conv(layer, in);
            for (size_t i = 0; i < fast.data.size(); ++i)
                if (std::abs(fast.data[i] - slow.data[i]) > 1e-9) ok = false;
        }
        check("conv_forward matches direct convolution", ok);
    }

    {
        bool ok = true;
        for (int trial = 0; trial < 50 && ok; ++trial) {
            HeatMap m(12, 10);
            for (double& v : m.values)
                v = std::floor(rng.uniform() * 5.0);  // plateaus likely
            const auto peaks = find_peaks(m, 0.0);
            auto expected = brute_regional_maxima(m);
            if (peaks.size() != expected.size()) {
                ok = false;
                break;
            }
            std::vector<char> used(expected.size(), 0);
            for (const auto& p : peaks) {
                bool matched = false;
                for (size_t i = 0; i < expected.size(); ++i) {
                    if (used[i]) continue;
                    if (std::abs(expected[i].x - p.x) < 1e-9 &&
                        std::abs(expected[i].y - p.y) < 1e-9 &&
                        expected[i].value == p.value) {
                        used[i] = 1;
                        matched = true;
                        break;
                    }
                }
                if (!matched) ok = false;
            }
        }
        check("find_peaks matches the regional-maxima oracle", ok);
    }

    {
        bool ok = true;
        for (int trial = 0; trial < 20 && ok; ++trial) {
            const int w = 17, h = 13;
            SaliencyMap smap;
            smap.width = w;
            smap.height = h;
            smap.binary.resize(static_cast<size_t>(w) * h);
            for (auto& b : smap.binary) b = rng.uniform() < 0.45;
            Image frame;
            frame.width = 64;
            frame.height = 64;
            frame.channels = 3;
            frame.data.assign(static_cast<size_t>(64) * 64 * 3, 0.5f);
            const auto cands =
                extract_candidates(smap, frame, BoundingBox{32, 32, 10, 10, 1}, 1.0);
            const auto [labels, count] = flood_fill_components(smap.binary, w, h);
            if (static_cast<int>(cands.size()) != count) {
                ok = false;
                break;
            }
            std::vector<int> seen(smap.binary.size(), 0);
            for (const auto& c : cands)
                for (uint32_t p : c.pixels) {
                    seen[p] += 1;
                    if (labels[p] < 0) ok = false;
                }
            for (size_t p = 0; p < smap.binary.size(); ++p)
                if ((seen[p] == 1) != (smap.binary[p] != 0)) ok = false;
        }
        check("extract_candidates matches the flood-fill oracle", ok);
    }

    {
        ShallowFeatureStack stack(shallow::kCount, 20, 20);
        for (double& v : stack.data) v = rng.uniform();
        const BoundingBox box{10, 10, 8, 8, 1};
        const PriorWeights pw = learn_prior_weights(stack, box, 1.0);
        // residual of the normal equations, recomputed from scratch
        std::vector<std::vector<double>> gram(shallow::kCount,
                                              std::vector<double>(shallow::kCount, 0.0));
        std::vector<double> rhs(shallow::kCount, 0.0);
        for (int i = 0; i < shallow::kCount; ++i) {
            for (int j = 0; j < shallow::kCount; ++j)
                for (size_t p = 0; p < stack.plane_size(); ++p)
                    gram[static_cast<size_t>(i)][static_cast<size_t>(j)] +=
                        stack.plane(i)[p] * stack.plane(j)[p];
            gram[static_cast<size_t>(i)][static_cast<size_t>(i)] += 1.0;
            for (int y = 0; y < 20; ++y)
                for (int x = 0; x < 20; ++x)
                    if (x >= box.left() && x <= box.right() && y >= box.top() &&
                        y <= box.bottom())
                        rhs[static_cast<size_t>(i)] +=
                            stack.plane(i)[static_cast<size_t>(y) * 20 + x];
        }
        double resid = 0.0;
        for (int i = 0; i < shallow::kCount; ++i) {
            double s = -rhs[static_cast<size_t>(i)];
            for (int j = 0; j < shallow::kCount; ++j)
                s += gram[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                     pw.w[static_cast<size_t>(j)];
            resid = std::max(resid, std::abs(s));
        }
        check("prior weights satisfy the normal equations", resid < 1e-8);
    }

    {
        // finite-difference gradient check on a tiny head net
        Rng init(7);
        HeadNet net = HeadNet::create(2, 2, init, 0.1);
        ChannelStack in(2, 6, 6);
        for (double& v : in.data) v = init.normal();
        HeatMap target(6, 6);
        for (double& v : target.values) v = init.normal();

        HeadCache cache;
        HeatMap out = head_forward(net, in, &cache);
        HeatMap d_out;
        masked_squared_loss(out, target, nullptr, nullptr, d_out);
        HeadGrads grads;
        grads.match(net);
        head_backward(net, cache, d_out, grads);

        const auto loss_at = [&](HeadNet& n) {
            HeatMap o = head_forward(n, in);
            HeatMap tmp;
            return masked_squared_loss(o, target, nullptr, nullptr, tmp);
        };
        bool ok = true;
        const double eps = 1e-6;
        for (size_t i = 0; i < net.l1.weights.size(); i += 17) {
            HeadNet plus = net, minus = net;
            plus.l1.weights[i] += eps;
            minus.l1.weights[i] -= eps;
            const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * eps);
            if (std::abs(fd - grads.g1.w[i]) > 1e-4 * std::max(1.0, std::abs(fd))) ok = false;
        }
        check("head gradients match finite differences", ok);
    }

    os << (failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
    return failures;
}

}  // namespace sdt::oracles
