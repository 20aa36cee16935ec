/*
 * Deep-feature plumbing. The tracker consumes two 46x46 feature stacks per
 * ROI ("conv4-like" fine, "conv5-like" coarse) through a provider interface:
 *
 *   StandInProvider    fixed filter bank (64 channels per stack), no external
 *                      model needed; the coarse stack is computed at 23x23
 *                      and delivered upsampled to 46x46
 *   FileFeatureProvider reads precomputed stacks from an .sdtf record file
 *
 * Channel selection trains a small selector net to regress the target map,
 * then scores each channel with a second-order estimate of the loss change
 * caused by zeroing it; for this linear selector and squared loss the
 * estimate is exact.
 */
#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <memory>
#include <numbers>
#include <numeric>
#include <utility>

#include <json.hpp>

#include "sdt/convnet.hpp"
#include "sdt/core.hpp"
#include "sdt/prior.hpp"

namespace sdt {

constexpr int kFeatureMapSize = 46;

enum class FeatureSource : uint8_t { conv4_like = 4, conv5_like = 5 };

struct DeepFeatureStack {
    ChannelStack stack;
    FeatureSource source = FeatureSource::conv4_like;
};

class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;
    // Deterministic: the same roi (and frame id, for file-backed providers)
    // always yields the same stacks.
    virtual std::pair<DeepFeatureStack, DeepFeatureStack> provide(const Image& roi,
                                                                  int frame_id) = 0;
    virtual int channels4() const = 0;
    virtual int channels5() const = 0;
};

// ---------------------------------------------------------------------------
// Stand-in provider: 4 color-opponent base planes x 16 fixed filters.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma, int ks) {
    const int r = ks / 2;
    std::vector<double> k(static_cast<size_t>(ks) * ks);
    double sum = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            k[static_cast<size_t>(dy + r) * ks + (dx + r)] = g;
            sum += g;
        }
    for (double& v : k) v /= sum;
    return k;
}

inline std::vector<double> edge_kernel(double theta, double sigma, int ks) {
    const int r = ks / 2;
    const double ct = std::cos(theta), st = std::sin(theta);
    std::vector<double> k(static_cast<size_t>(ks) * ks);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double u = dx * ct + dy * st;
            k[static_cast<size_t>(dy + r) * ks + (dx + r)] =
                u * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
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

inline std::vector<double> log_kernel(double sigma, int ks) {
    const int r = ks / 2;
    std::vector<double> k(static_cast<size_t>(ks) * ks);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double r2 = dx * dx + dy * dy;
            const double g = std::exp(-r2 / (2.0 * sigma * sigma));
            k[static_cast<size_t>(dy + r) * ks + (dx + r)] =
                (r2 / (sigma * sigma * sigma * sigma) - 2.0 / (sigma * sigma)) * g;
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

}  // namespace detail

class StandInProvider : public FeatureProvider {
public:
    static constexpr int kBases = 4;
    static constexpr int kFilters = 16;
    static constexpr int kChannels = kBases * kFilters;

    StandInProvider() {
        const double sa = 1.0, sb = 2.0;
        const int ka = 7, kb = 13;
        filters_.push_back({detail::gaussian_kernel(sa, ka), ka, false});
        for (int o = 0; o < 4; ++o)
            filters_.push_back({detail::edge_kernel(o * std::numbers::pi / 4.0, sa, ka), ka, true});
        for (int o = 0; o < 4; ++o)
            filters_.push_back(
                {sdt::detail::oriented_kernel(o * std::numbers::pi / 4.0, sa, ka), ka, true});
        for (int o = 0; o < 4; ++o)
            filters_.push_back({detail::edge_kernel(o * std::numbers::pi / 4.0, sb, kb), kb, true});
        filters_.push_back({detail::log_kernel(sa, ka), ka, true});
        filters_.push_back({detail::log_kernel(sb, kb), kb, true});
        filters_.push_back({detail::gaussian_kernel(sb, kb), kb, false});
    }

    std::pair<DeepFeatureStack, DeepFeatureStack> provide(const Image& roi, int) override {
        DeepFeatureStack f4{compute(roi, kFeatureMapSize), FeatureSource::conv4_like};
        ChannelStack coarse = compute(roi, kFeatureMapSize / 2);
        ChannelStack up(coarse.channels, kFeatureMapSize, kFeatureMapSize);
        for (int c = 0; c < coarse.channels; ++c) {
            HeatMap m(coarse.width, coarse.height);
            std::copy(coarse.plane(c), coarse.plane(c) + coarse.plane_size(), m.values.begin());
            HeatMap r = resize_bilinear(m, kFeatureMapSize, kFeatureMapSize);
            std::copy(r.values.begin(), r.values.end(), up.plane(c));
        }
        DeepFeatureStack f5{std::move(up), FeatureSource::conv5_like};
        return {std::move(f4), std::move(f5)};
    }

    int channels4() const override { return kChannels; }
    int channels5() const override { return kChannels; }

private:
    struct Filter {
        std::vector<double> kernel;
        int size;
        bool magnitude;  // band-pass channels report |response|
    };
    std::vector<Filter> filters_;

    ChannelStack compute(const Image& roi, int raster) const {
        const Image img = resize_bilinear(roi, raster, raster);
        const size_t plane = static_cast<size_t>(raster) * raster;
        std::array<std::vector<double>, kBases> bases;
        for (auto& b : bases) b.assign(plane, 0.0);
        for (size_t p = 0; p < plane; ++p) {
            if (img.channels >= 3) {
                const float* px = &img.data[p * img.channels];
                const double r = px[0], g = px[1], b = px[2];
                bases[0][p] = (r + g + b) / 3.0;
                bases[1][p] = r - g;
                bases[2][p] = (r + g) / 2.0 - b;
                bases[3][p] = std::max({r, g, b}) - std::min({r, g, b});
            } else {
                bases[0][p] = img.data[p * img.channels];
            }
        }
        ChannelStack out(kChannels, raster, raster);
        for (int bi = 0; bi < kBases; ++bi)
            for (int fi = 0; fi < kFilters; ++fi) {
                const Filter& f = filters_[static_cast<size_t>(fi)];
                auto resp = sdt::detail::conv2_replicate(bases[static_cast<size_t>(bi)], raster,
                                                         raster, f.kernel, f.size);
                if (f.magnitude)
                    for (double& v : resp) v = std::abs(v);
                // Per-channel standardization keeps the regression problem well
                // conditioned regardless of the filter's pass band.
                double mean = 0.0;
                for (double v : resp) mean += v;
                mean /= static_cast<double>(resp.size());
                double var = 0.0;
                for (double v : resp) var += (v - mean) * (v - mean);
                var /= static_cast<double>(resp.size());
                const double inv = 1.0 / std::sqrt(var + 1e-8);
                for (double& v : resp) v = (v - mean) * inv;
                std::copy(resp.begin(), resp.end(), out.plane(bi * kFilters + fi));
            }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Feature record file: per-frame binary records plus a JSON offset index.
// Record: "SDTF" | version u16 | frame id u32 | source u8 | channels u16 |
// width u16 | height u16 | channel-major f32 little-endian data.
// ---------------------------------------------------------------------------

constexpr uint16_t kFeatureFileVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace detail

inline void write_feature_record(std::ostream& os, int frame_id, const DeepFeatureStack& s) {
    os.write("SDTF", 4);
    detail::write_pod<uint16_t>(os, kFeatureFileVersion);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(frame_id));
    detail::write_pod<uint8_t>(os, static_cast<uint8_t>(s.source));
    detail::write_pod<uint16_t>(os, static_cast<uint16_t>(s.stack.channels));
    detail::write_pod<uint16_t>(os, static_cast<uint16_t>(s.stack.width));
    detail::write_pod<uint16_t>(os, static_cast<uint16_t>(s.stack.height));
    std::vector<float> buf(s.stack.data.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(s.stack.data[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline DeepFeatureStack read_feature_record(std::istream& is, int expect_frame) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SDTF", 4) != 0)
        throw std::runtime_error("feature file: bad record magic at frame " +
                                 std::to_string(expect_frame));
    const auto version = detail::read_pod<uint16_t>(is);
    if (version != kFeatureFileVersion)
        throw std::runtime_error("feature file: unsupported version " + std::to_string(version));
    const auto frame_id = detail::read_pod<uint32_t>(is);
    if (static_cast<int>(frame_id) != expect_frame)
        throw std::runtime_error("feature file: record for frame " + std::to_string(frame_id) +
                                 " where frame " + std::to_string(expect_frame) + " was expected");
    const auto source = detail::read_pod<uint8_t>(is);
    const auto channels = detail::read_pod<uint16_t>(is);
    const auto width = detail::read_pod<uint16_t>(is);
    const auto height = detail::read_pod<uint16_t>(is);
    DeepFeatureStack out;
    out.source = static_cast<FeatureSource>(source);
    out.stack = ChannelStack(channels, width, height);
    std::vector<float> buf(out.stack.data.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is)
        throw std::runtime_error("feature file: truncated data for frame " +
                                 std::to_string(expect_frame));
    for (size_t i = 0; i < buf.size(); ++i) out.stack.data[i] = buf[i];
    return out;
}

class FeatureFileWriter {
public:
    explicit FeatureFileWriter(const std::string& path) : path_(path), os_(path, std::ios::binary) {
        if (!os_) throw std::runtime_error("feature file: cannot open " + path + " for writing");
        index_["format"] = "sdtf-index";
        index_["version"] = kFeatureFileVersion;
        index_["frames"] = nlohmann::ordered_json::object();
    }

    void append(int frame_id, const DeepFeatureStack& f4, const DeepFeatureStack& f5) {
        if (index_["frames"].contains(std::to_string(frame_id)))
            throw std::runtime_error("feature file: duplicate frame " + std::to_string(frame_id));
        if (!index_.contains("channels4")) {
            index_["channels4"] = f4.stack.channels;
            index_["channels5"] = f5.stack.channels;
        }
        nlohmann::ordered_json entry;
        entry["conv4"] = static_cast<int64_t>(os_.tellp());
        write_feature_record(os_, frame_id, f4);
        entry["conv5"] = static_cast<int64_t>(os_.tellp());
        write_feature_record(os_, frame_id, f5);
        index_["frames"][std::to_string(frame_id)] = entry;
    }

    void finish() {
        os_.close();
        std::ofstream idx(path_ + ".idx");
        if (!idx) throw std::runtime_error("feature file: cannot write index " + path_ + ".idx");
        idx << index_.dump(2) << "\n";
    }

private:
    std::string path_;
    std::ofstream os_;
    nlohmann::ordered_json index_;
};

class FileFeatureProvider : public FeatureProvider {
public:
    explicit FileFeatureProvider(const std::string& path) : path_(path), is_(path, std::ios::binary) {
        if (!is_) throw std::runtime_error("feature file: cannot open " + path);
        std::ifstream idx(path + ".idx");
        if (!idx) throw std::runtime_error("feature file: missing index " + path + ".idx");
        idx >> index_;
        channels4_ = index_.at("channels4").get<int>();
        channels5_ = index_.at("channels5").get<int>();
    }

    std::pair<DeepFeatureStack, DeepFeatureStack> provide(const Image&, int frame_id) override {
        const std::string key = std::to_string(frame_id);
        if (!index_.at("frames").contains(key))
            throw std::runtime_error("feature file: no record for frame " + key);
        const auto& entry = index_.at("frames").at(key);
        DeepFeatureStack f4 = read_at(entry.at("conv4").get<int64_t>(), frame_id);
        DeepFeatureStack f5 = read_at(entry.at("conv5").get<int64_t>(), frame_id);
        validate(f4, channels4_, frame_id);
        validate(f5, channels5_, frame_id);
        return {std::move(f4), std::move(f5)};
    }

    int channels4() const override { return channels4_; }
    int channels5() const override { return channels5_; }

private:
    std::string path_;
    std::ifstream is_;
    nlohmann::json index_;
    int channels4_ = 0, channels5_ = 0;

    DeepFeatureStack read_at(int64_t offset, int frame_id) {
        is_.clear();
        is_.seekg(offset);
        return read_feature_record(is_, frame_id);
    }

    static void validate(const DeepFeatureStack& s, int channels, int frame_id) {
        if (s.stack.width != kFeatureMapSize || s.stack.height != kFeatureMapSize ||
            s.stack.channels != channels)
            throw std::runtime_error("feature file: shape mismatch at frame " +
                                     std::to_string(frame_id));
    }
};

// ---------------------------------------------------------------------------
// Channel scoring and selection.
// ---------------------------------------------------------------------------

// Estimated loss change from zeroing each channel, via a second-order
// expansion around the current input: SC_i = -<dL/df_i, f_i> + sum_p c_i(p)^2
// where c_i is channel i's lone contribution through the conv. For a linear
// selector with squared loss this equals the exact change.
inline std::vector<double> score_feature_saliency(const SelectorNet& net, const ChannelStack& stack,
                                                  const HeatMap& target) {
    if (!net.trained)
        throw std::runtime_error("score_feature_saliency: selector has not been trained");
    if (stack.channels != net.conv.in_ch)
        throw std::invalid_argument("score_feature_saliency: channel count mismatch");

    PaddedInput pin;
    pin.assign(stack, net.conv.pad);
    ChannelStack pre;
    ChannelStack out = conv_forward(net.conv, pin, &pre);
    HeatMap out_map = stack_to_heatmap(out);
    HeatMap d_out;
    masked_squared_loss(out_map, target, nullptr, nullptr, d_out);

    ChannelStack d2(1, d_out.width, d_out.height);
    std::copy(d_out.values.begin(), d_out.values.end(), d2.plane(0));
    ConvGrads grads;
    grads.match(net.conv);
    ChannelStack d_in;
    conv_backward(net.conv, pin, pre, d2, grads, &d_in);

    std::vector<double> scores(static_cast<size_t>(stack.channels), 0.0);
    for (int c = 0; c < stack.channels; ++c) {
        const double* g = d_in.plane(c);
        const double* f = stack.plane(c);
        double first = 0.0;
        for (size_t p = 0; p < stack.plane_size(); ++p) first += g[p] * f[p];

        ChannelStack one(1, stack.width, stack.height);
        std::copy(f, f + stack.plane_size(), one.plane(0));
        ConvLayer slice(1, 1, net.conv.kh, Activation::identity);
        std::copy(net.conv.kernel(0, c), net.conv.kernel(0, c) + net.conv.kernel_size(),
                  slice.kernel(0, 0));
        ChannelStack contrib = conv_forward(slice, one);
        double second = 0.0;
        for (double v : contrib.data) second += v * v;

        scores[static_cast<size_t>(c)] = -first + second;
    }
    return scores;
}

struct SelectionMask {
    std::vector<int> kept;        // channel indices, descending score, ties by lower index
    std::vector<double> scores;   // per input channel
};

inline SelectionMask select_top_features(const std::vector<double>& scores, int n_s) {
    for (double s : scores)
        if (!std::isfinite(s))
            throw std::invalid_argument("select_top_features: non-finite score");
    if (n_s < 1) throw std::invalid_argument("select_top_features: n_s must be positive");
    SelectionMask mask;
    mask.scores = scores;
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        return a < b;
    });
    order.resize(std::min<size_t>(order.size(), static_cast<size_t>(n_s)));
    mask.kept = std::move(order);
    return mask;
}

inline ChannelStack apply_selection(const ChannelStack& stack, const SelectionMask& mask) {
    ChannelStack out(static_cast<int>(mask.kept.size()), stack.width, stack.height);
    for (size_t i = 0; i < mask.kept.size(); ++i) {
        const int c = mask.kept[i];
        if (c < 0 || c >= stack.channels)
            throw std::invalid_argument("apply_selection: index out of range");
        std::copy(stack.plane(c), stack.plane(c) + stack.plane_size(),
                  out.plane(static_cast<int>(i)));
    }
    return out;
}

}  // namespace sdt
