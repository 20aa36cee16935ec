/*
 * Minimal trainable convolution engine: same-size conv layers (stride 1,
 * zero padding), ReLU/identity activations, plain SGD with Frobenius weight
 * decay, and the two fixed topologies used by the tracker:
 *
 *   HeadNet      9x9 conv + ReLU -> 5x5 conv        (heat-map regression)
 *   SelectorNet  dropout(0.3) -> 3x3 conv           (feature scoring)
 *
 * Everything runs in double precision, single sample at a time. Loops are
 * laid out so the innermost x-scan is contiguous; no threading, results are
 * exactly reproducible.
 */
#pragma once

#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "sdt/core.hpp"
#include "sdt/rng.hpp"

namespace sdt {

enum class Activation { relu, identity };

struct ConvLayer {
    int out_ch = 0, in_ch = 0, kh = 0, kw = 0, pad = 0;
    Activation act = Activation::identity;
    std::vector<double> weights;  // [oc][ic][ky][kx]
    std::vector<double> bias;     // [oc]

    ConvLayer() = default;
    ConvLayer(int oc, int ic, int k, Activation a)
        : out_ch(oc), in_ch(ic), kh(k), kw(k), pad(k / 2), act(a),
          weights(static_cast<size_t>(oc) * ic * k * k, 0.0), bias(oc, 0.0) {
        if (k % 2 == 0) throw std::invalid_argument("ConvLayer: kernel size must be odd");
    }

    size_t kernel_size() const { return static_cast<size_t>(kh) * kw; }
    double* kernel(int oc, int ic) {
        return weights.data() + (static_cast<size_t>(oc) * in_ch + ic) * kernel_size();
    }
    const double* kernel(int oc, int ic) const {
        return weights.data() + (static_cast<size_t>(oc) * in_ch + ic) * kernel_size();
    }

    void init_gaussian(Rng& rng, double std) {
        for (double& w : weights) w = rng.normal(0.0, std);
        std::fill(bias.begin(), bias.end(), 0.0);
    }
};

namespace detail {

inline void pad_plane(const double* src, int w, int h, int pad, double* dst) {
    const int pw = w + 2 * pad;
    const int ph = h + 2 * pad;
    std::fill(dst, dst + static_cast<size_t>(pw) * ph, 0.0);
    for (int y = 0; y < h; ++y)
        std::memcpy(dst + (static_cast<size_t>(y) + pad) * pw + pad, src + static_cast<size_t>(y) * w,
                    sizeof(double) * w);
}

// acc[y][x] += wv * padded[(y+ky)][(x+kx)] for the whole plane.
inline void accumulate_shifted(double* acc, const double* padded, int w, int h, int pw,
                               int ky, int kx, double wv) {
    for (int y = 0; y < h; ++y) {
        const double* row = padded + (static_cast<size_t>(y) + ky) * pw + kx;
        double* out = acc + static_cast<size_t>(y) * w;
        for (int x = 0; x < w; ++x) out[x] += wv * row[x];
    }
}

}  // namespace detail

// Pre-padded input planes for one layer; reused across iterations.
struct PaddedInput {
    int w = 0, h = 0, pad = 0, channels = 0;
    std::vector<double> data;  // [c][(h+2p)][(w+2p)]

    void assign(const ChannelStack& in, int p) {
        w = in.width;
        h = in.height;
        pad = p;
        channels = in.channels;
        const size_t plane = static_cast<size_t>(w + 2 * p) * (h + 2 * p);
        data.resize(plane * channels);
        for (int c = 0; c < channels; ++c)
            detail::pad_plane(in.plane(c), w, h, p, data.data() + c * plane);
    }
    size_t plane_size() const { return static_cast<size_t>(w + 2 * pad) * (h + 2 * pad); }
    const double* plane(int c) const { return data.data() + c * plane_size(); }
};

// Forward one layer. `pre` (pre-activation) is filled when given; needed for backprop.
inline ChannelStack conv_forward(const ConvLayer& layer, const PaddedInput& pin,
                                 ChannelStack* pre = nullptr) {
    if (pin.channels != layer.in_ch)
        throw std::invalid_argument("conv_forward: input channel mismatch");
    const int w = pin.w, h = pin.h, pw = pin.w + 2 * pin.pad;
    ChannelStack out(layer.out_ch, w, h);
    for (int oc = 0; oc < layer.out_ch; ++oc) {
        double* acc = out.plane(oc);
        std::fill(acc, acc + out.plane_size(), layer.bias[oc]);
        for (int ic = 0; ic < layer.in_ch; ++ic) {
            const double* k = layer.kernel(oc, ic);
            const double* p = pin.plane(ic);
            for (int ky = 0; ky < layer.kh; ++ky)
                for (int kx = 0; kx < layer.kw; ++kx)
                    detail::accumulate_shifted(acc, p, w, h, pw, ky, kx, k[ky * layer.kw + kx]);
        }
    }
    if (pre) *pre = out;
    if (layer.act == Activation::relu)
        for (double& v : out.data) v = std::max(v, 0.0);
    return out;
}

inline ChannelStack conv_forward(const ConvLayer& layer, const ChannelStack& in,
                                 ChannelStack* pre = nullptr) {
    PaddedInput pin;
    pin.assign(in, layer.pad);
    return conv_forward(layer, pin, pre);
}

struct ConvGrads {
    std::vector<double> w, b;
    void match(const ConvLayer& layer) {
        w.assign(layer.weights.size(), 0.0);
        b.assign(layer.bias.size(), 0.0);
    }
};

// Backprop one layer. `d_out` is dLoss/d(post-activation). Accumulates into
// `grads`; writes dLoss/d(input) into `d_in` when non-null.
inline void conv_backward(const ConvLayer& layer, const PaddedInput& pin, const ChannelStack& pre,
                          const ChannelStack& d_out, ConvGrads& grads, ChannelStack* d_in) {
    const int w = pin.w, h = pin.h, pw = pin.w + 2 * pin.pad;
    const size_t plane = static_cast<size_t>(w) * h;
    const size_t pplane = pin.plane_size();

    // ReLU gate: relu'(x) = 1 for x > 0, 0 otherwise.
    ChannelStack d_pre = d_out;
    if (layer.act == Activation::relu)
        for (size_t i = 0; i < d_pre.data.size(); ++i)
            if (pre.data[i] <= 0.0) d_pre.data[i] = 0.0;

    std::vector<double> d_in_padded;
    if (d_in) {
        *d_in = ChannelStack(layer.in_ch, w, h);
        d_in_padded.assign(pplane, 0.0);
    }

    for (int oc = 0; oc < layer.out_ch; ++oc) {
        const double* g = d_pre.plane(oc);
        grads.b[oc] += std::accumulate(g, g + plane, 0.0);
        for (int ic = 0; ic < layer.in_ch; ++ic) {
            const double* p = pin.plane(ic);
            double* gw = grads.w.data() + (static_cast<size_t>(oc) * layer.in_ch + ic) * layer.kernel_size();
            for (int ky = 0; ky < layer.kh; ++ky) {
                for (int kx = 0; kx < layer.kw; ++kx) {
                    double acc = 0.0;
                    for (int y = 0; y < h; ++y) {
                        const double* row = p + (static_cast<size_t>(y) + ky) * pw + kx;
                        const double* gr = g + static_cast<size_t>(y) * w;
                        for (int x = 0; x < w; ++x) acc += row[x] * gr[x];
                    }
                    gw[ky * layer.kw + kx] += acc;
                }
            }
        }
    }

    if (d_in) {
        for (int ic = 0; ic < layer.in_ch; ++ic) {
            std::fill(d_in_padded.begin(), d_in_padded.end(), 0.0);
            for (int oc = 0; oc < layer.out_ch; ++oc) {
                const double* k = layer.kernel(oc, ic);
                const double* g = d_pre.plane(oc);
                for (int ky = 0; ky < layer.kh; ++ky) {
                    for (int kx = 0; kx < layer.kw; ++kx) {
                        const double wv = k[ky * layer.kw + kx];
                        for (int y = 0; y < h; ++y) {
                            double* row = d_in_padded.data() + (static_cast<size_t>(y) + ky) * pw + kx;
                            const double* gr = g + static_cast<size_t>(y) * w;
                            for (int x = 0; x < w; ++x) row[x] += wv * gr[x];
                        }
                    }
                }
            }
            double* dst = d_in->plane(ic);
            for (int y = 0; y < h; ++y)
                std::memcpy(dst + static_cast<size_t>(y) * w,
                            d_in_padded.data() + (static_cast<size_t>(y) + pin.pad) * pw + pin.pad,
                            sizeof(double) * w);
        }
    }
}

// SGD step; weight decay adds 2*beta_w*W to the kernel gradient (biases undecayed).
inline void conv_apply_step(ConvLayer& layer, const ConvGrads& grads, double lr, double beta_w) {
    for (size_t i = 0; i < layer.weights.size(); ++i)
        layer.weights[i] -= lr * (grads.w[i] + 2.0 * beta_w * layer.weights[i]);
    for (size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] -= lr * grads.b[i];
}

// ---------------------------------------------------------------------------
// HeadNet: two-layer heat-map regressor.
// ---------------------------------------------------------------------------

struct HeadNet {
    ConvLayer l1;  // 9x9, ReLU
    ConvLayer l2;  // 5x5, identity, single output map

    static HeadNet create(int in_ch, int hidden, Rng& rng, double init_std) {
        HeadNet net;
        net.l1 = ConvLayer(hidden, in_ch, 9, Activation::relu);
        net.l2 = ConvLayer(1, hidden, 5, Activation::identity);
        net.l1.init_gaussian(rng, init_std);
        net.l2.init_gaussian(rng, init_std);
        return net;
    }
};

inline HeatMap stack_to_heatmap(const ChannelStack& s) {
    HeatMap m(s.width, s.height);
    std::copy(s.plane(0), s.plane(0) + s.plane_size(), m.values.begin());
    return m;
}

struct HeadCache {
    PaddedInput pin1, pin2;
    ChannelStack pre1, act1, pre2;
};

inline HeatMap head_forward(const HeadNet& net, const ChannelStack& in, HeadCache* cache = nullptr) {
    HeadCache local;
    HeadCache& c = cache ? *cache : local;
    c.pin1.assign(in, net.l1.pad);
    c.act1 = conv_forward(net.l1, c.pin1, &c.pre1);
    c.pin2.assign(c.act1, net.l2.pad);
    ChannelStack out = conv_forward(net.l2, c.pin2, &c.pre2);
    return stack_to_heatmap(out);
}

struct HeadGrads {
    ConvGrads g1, g2;
    void match(const HeadNet& net) {
        g1.match(net.l1);
        g2.match(net.l2);
    }
};

// Backprop dLoss/d(output map) through both layers, accumulating into `grads`.
inline void head_backward(const HeadNet& net, const HeadCache& cache, const HeatMap& d_out,
                          HeadGrads& grads, ChannelStack* d_in = nullptr) {
    ChannelStack d2(1, d_out.width, d_out.height);
    std::copy(d_out.values.begin(), d_out.values.end(), d2.plane(0));
    ChannelStack d_act1;
    conv_backward(net.l2, cache.pin2, cache.pre2, d2, grads.g2, &d_act1);
    conv_backward(net.l1, cache.pin1, cache.pre1, d_act1, grads.g1, d_in);
}

inline void head_apply_step(HeadNet& net, const HeadGrads& grads, double lr, double beta_w) {
    conv_apply_step(net.l1, grads.g1, lr, beta_w);
    conv_apply_step(net.l2, grads.g2, lr, beta_w);
}

// ---------------------------------------------------------------------------
// Loss: masked squared error with optional per-pixel truncation. The
// truncation gates a pixel to zero loss/gradient when its absolute residual
// falls below eps / (k + mu * phi(x,y)).
// ---------------------------------------------------------------------------

struct TruncationSpec {
    double eps = 0.0;
    double k = 20.0;
    double mu = 30.0;
    const HeatMap* phi = nullptr;
};

inline double truncation_threshold(const TruncationSpec& t, double phi) {
    return t.eps / (t.k + t.mu * phi);
}

inline double masked_squared_loss(const HeatMap& out, const HeatMap& target,
                                  const std::vector<double>* mask, const TruncationSpec* trunc,
                                  HeatMap& d_out) {
    if (out.width != target.width || out.height != target.height)
        throw std::invalid_argument("loss: shape mismatch");
    d_out = HeatMap(out.width, out.height);
    double loss = 0.0;
    for (size_t i = 0; i < out.values.size(); ++i) {
        const double m = mask ? (*mask)[i] : 1.0;
        if (m == 0.0) continue;
        const double e = out.values[i] - target.values[i];
        if (trunc) {
            const double thr = truncation_threshold(*trunc, trunc->phi ? trunc->phi->values[i] : 0.0);
            if (std::abs(e) <= thr) continue;
        }
        loss += m * e * e;
        d_out.values[i] = 2.0 * m * e;
    }
    return loss;
}

struct TrainSpec {
    int iterations = 100;
    double learning_rate = 1e-5;
    double weight_decay = 0.0;  // beta_w
};

// One SGD step on the plain squared loss; returns the pre-step loss.
inline double backward_and_step(HeadNet& net, const ChannelStack& in, const HeatMap& target,
                                double lr, double beta_w) {
    HeadCache cache;
    HeatMap out = head_forward(net, in, &cache);
    HeatMap d_out;
    const double loss = masked_squared_loss(out, target, nullptr, nullptr, d_out);
    if (!std::isfinite(loss))
        throw std::runtime_error("backward_and_step: non-finite loss (learning rate too high?)");
    HeadGrads grads;
    grads.match(net);
    head_backward(net, cache, d_out, grads);
    head_apply_step(net, grads, lr, beta_w);
    return loss;
}

inline std::vector<double> train(HeadNet& net, const ChannelStack& in, const HeatMap& target,
                                 const TrainSpec& spec) {
    std::vector<double> losses;
    losses.reserve(spec.iterations);
    for (int it = 0; it < spec.iterations; ++it)
        losses.push_back(backward_and_step(net, in, target, spec.learning_rate, spec.weight_decay));
    return losses;
}

// ---------------------------------------------------------------------------
// SelectorNet: dropout + single 3x3 conv onto one map.
// ---------------------------------------------------------------------------

struct SelectorNet {
    double dropout_ratio = 0.3;
    ConvLayer conv;  // 3x3, identity
    bool train_mode = false;
    bool trained = false;

    static SelectorNet create(int in_ch, double dropout, Rng& rng, double init_std) {
        SelectorNet net;
        net.dropout_ratio = dropout;
        net.conv = ConvLayer(1, in_ch, 3, Activation::identity);
        net.conv.init_gaussian(rng, init_std);
        return net;
    }
};

// Inverted dropout: train-time activations are scaled by 1/(1-ratio) so the
// eval path needs no rescaling.
inline ChannelStack apply_dropout(const ChannelStack& in, double ratio, Rng& rng) {
    ChannelStack out = in;
    const double scale = 1.0 / (1.0 - ratio);
    for (double& v : out.data) v = (rng.uniform() < ratio) ? 0.0 : v * scale;
    return out;
}

inline HeatMap selector_forward(const SelectorNet& net, const ChannelStack& in,
                                Rng* rng = nullptr) {
    if (net.train_mode) {
        if (!rng) throw std::invalid_argument("selector_forward: train mode needs an rng");
        return stack_to_heatmap(conv_forward(net.conv, apply_dropout(in, net.dropout_ratio, *rng)));
    }
    return stack_to_heatmap(conv_forward(net.conv, in));
}

inline void train_selector(SelectorNet& net, const ChannelStack& in, const HeatMap& target,
                           const TrainSpec& spec, Rng& rng) {
    net.train_mode = true;
    for (int it = 0; it < spec.iterations; ++it) {
        ChannelStack dropped = apply_dropout(in, net.dropout_ratio, rng);
        PaddedInput pin;
        pin.assign(dropped, net.conv.pad);
        ChannelStack pre;
        ChannelStack out = conv_forward(net.conv, pin, &pre);
        HeatMap out_map = stack_to_heatmap(out);
        HeatMap d_out;
        const double loss = masked_squared_loss(out_map, target, nullptr, nullptr, d_out);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_selector: non-finite loss (learning rate too high?)");
        ChannelStack d2(1, d_out.width, d_out.height);
        std::copy(d_out.values.begin(), d_out.values.end(), d2.plane(0));
        ConvGrads grads;
        grads.match(net.conv);
        conv_backward(net.conv, pin, pre, d2, grads, nullptr);
        conv_apply_step(net.conv, grads, spec.learning_rate, spec.weight_decay);
    }
    net.train_mode = false;
    net.trained = true;
}

// ---------------------------------------------------------------------------
// Serialization: JSON header + raw little-endian doubles; round-trips are
// bitwise exact.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_doubles(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::istream& is, std::vector<double>& v, size_t n) {
    v.resize(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("net load: truncated weight data");
}

inline nlohmann::ordered_json layer_header(const ConvLayer& l) {
    return {{"out_ch", l.out_ch}, {"in_ch", l.in_ch}, {"k", l.kh},
            {"act", l.act == Activation::relu ? "relu" : "identity"}};
}

inline ConvLayer layer_from_header(const nlohmann::json& j) {
    ConvLayer l(j.at("out_ch").get<int>(), j.at("in_ch").get<int>(), j.at("k").get<int>(),
                j.at("act").get<std::string>() == "relu" ? Activation::relu : Activation::identity);
    return l;
}

inline void write_container(std::ostream& os, const nlohmann::ordered_json& header,
                            const std::vector<const std::vector<double>*>& blobs) {
    const std::string h = header.dump();
    const uint32_t len = static_cast<uint32_t>(h.size());
    os.write("SDTW", 4);
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto* b : blobs) write_doubles(os, *b);
}

inline nlohmann::json read_container_header(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SDTW", 4) != 0)
        throw std::runtime_error("net load: bad magic");
    uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string h(len, '\0');
    is.read(h.data(), len);
    if (!is) throw std::runtime_error("net load: truncated header");
    return nlohmann::json::parse(h);
}

}  // namespace detail

inline void save_head(const HeadNet& net, std::ostream& os) {
    nlohmann::ordered_json header = {{"format", "sdt-net"},
                                     {"version", 1},
                                     {"type", "head"},
                                     {"l1", detail::layer_header(net.l1)},
                                     {"l2", detail::layer_header(net.l2)}};
    detail::write_container(os, header, {&net.l1.weights, &net.l1.bias, &net.l2.weights, &net.l2.bias});
}

inline HeadNet load_head(std::istream& is) {
    nlohmann::json h = detail::read_container_header(is);
    if (h.at("type") != "head") throw std::runtime_error("net load: not a head net");
    HeadNet net;
    net.l1 = detail::layer_from_header(h.at("l1"));
    net.l2 = detail::layer_from_header(h.at("l2"));
    detail::read_doubles(is, net.l1.weights, net.l1.weights.size());
    detail::read_doubles(is, net.l1.bias, net.l1.bias.size());
    detail::read_doubles(is, net.l2.weights, net.l2.weights.size());
    detail::read_doubles(is, net.l2.bias, net.l2.bias.size());
    return net;
}

inline void save_head(const HeadNet& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("net save: cannot open " + path);
    save_head(net, os);
}

inline HeadNet load_head(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("net load: cannot open " + path);
    return load_head(is);
}

inline std::string head_weight_digest(const HeadNet& net) {
    // Cheap structural fingerprint for change detection in tests.
    std::ostringstream os(std::ios::binary);
    save_head(net, os);
    const std::string s = os.str();
    uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : s) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    std::ostringstream hex;
    hex << std::hex << hash;
    return hex.str();
}

}  // namespace sdt
