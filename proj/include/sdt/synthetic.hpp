/*
 * Deterministic synthetic sequences: a textured colored square moving over a
 * cluttered gradient background, with optional teleports, an identical-looking
 * distracter, appearance drift and scale ramps. Frames depend only on
 * (spec, frame index), so any subset of frames can be regenerated bitwise.
 */
#pragma once

#include <array>
#include <string>

#include <json.hpp>

#include "sdt/core.hpp"
#include "sdt/rng.hpp"

namespace sdt {

struct LoadedSequence {
    std::string name;
    std::vector<Image> frames;
    std::vector<BoundingBox> groundtruth;
};

struct SyntheticSpec {
    std::string name = "synthetic";
    int width = 320, height = 240;
    int frames = 60;
    uint64_t seed = 7;
    double noise = 0.02;
    std::array<double, 3> background{1.0, 0.98, 1.02};  // per-channel scale of the gradient

    double size = 40.0;                      // target side length at frame 1
    std::array<double, 3> color{0.85, 0.25, 0.20};
    double texture = 0.35;                   // texture contrast
    double hue_drift = 0.0;                  // appearance drift per frame
    double scale_ramp = 0.0;                 // relative growth per frame

    std::string motion = "linear";           // static | linear | teleport
    std::array<double, 2> start{60.0, 120.0};
    std::array<double, 2> velocity{2.0, 0.0};
    int teleport_frame = 30;
    std::array<double, 2> teleport_to{260.0, 120.0};

    bool distracter = false;
    std::array<double, 2> distracter_start{260.0, 60.0};
    std::array<double, 2> distracter_velocity{-2.0, 0.0};

    int clutter_count = 6;
    double clutter_size = 18.0;
};

namespace detail {

inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline double hash01(uint64_t a, uint64_t b, uint64_t c) {
    const uint64_t h = mix64(mix64(mix64(a) ^ b) ^ c);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace detail

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.name = j.value("name", s.name);
    if (j.contains("canvas")) {
        s.width = j.at("canvas").at(0).get<int>();
        s.height = j.at("canvas").at(1).get<int>();
    }
    s.frames = j.value("frames", s.frames);
    s.seed = j.value("seed", s.seed);
    s.noise = j.value("noise", s.noise);
    if (j.contains("background"))
        for (int i = 0; i < 3; ++i)
            s.background[static_cast<size_t>(i)] = j.at("background").at(i).get<double>();
    if (j.contains("target")) {
        const auto& t = j.at("target");
        s.size = t.value("size", s.size);
        if (t.contains("color"))
            for (int i = 0; i < 3; ++i)
                s.color[static_cast<size_t>(i)] = t.at("color").at(i).get<double>();
        s.texture = t.value("texture", s.texture);
        s.hue_drift = t.value("hue_drift", s.hue_drift);
        s.scale_ramp = t.value("scale_ramp", s.scale_ramp);
    }
    if (j.contains("motion")) {
        const auto& m = j.at("motion");
        s.motion = m.value("type", s.motion);
        if (m.contains("start")) {
            s.start[0] = m.at("start").at(0).get<double>();
            s.start[1] = m.at("start").at(1).get<double>();
        }
        if (m.contains("velocity")) {
            s.velocity[0] = m.at("velocity").at(0).get<double>();
            s.velocity[1] = m.at("velocity").at(1).get<double>();
        }
        s.teleport_frame = m.value("teleport_frame", s.teleport_frame);
        if (m.contains("teleport_to")) {
            s.teleport_to[0] = m.at("teleport_to").at(0).get<double>();
            s.teleport_to[1] = m.at("teleport_to").at(1).get<double>();
        }
    }
    if (j.contains("distracter")) {
        const auto& d = j.at("distracter");
        s.distracter = d.value("enabled", true);
        if (d.contains("start")) {
            s.distracter_start[0] = d.at("start").at(0).get<double>();
            s.distracter_start[1] = d.at("start").at(1).get<double>();
        }
        if (d.contains("velocity")) {
            s.distracter_velocity[0] = d.at("velocity").at(0).get<double>();
            s.distracter_velocity[1] = d.at("velocity").at(1).get<double>();
        }
    }
    if (j.contains("clutter")) {
        s.clutter_count = j.at("clutter").value("count", s.clutter_count);
        s.clutter_size = j.at("clutter").value("size", s.clutter_size);
    }
    return s;
}

// 1-based frame index, matching the tracker's frame numbering.
inline std::array<double, 2> synthetic_position(const SyntheticSpec& s, int t) {
    if (s.motion == "static") return s.start;
    if (s.motion == "teleport" && t >= s.teleport_frame)
        return {s.teleport_to[0] + s.velocity[0] * (t - s.teleport_frame),
                s.teleport_to[1] + s.velocity[1] * (t - s.teleport_frame)};
    return {s.start[0] + s.velocity[0] * (t - 1), s.start[1] + s.velocity[1] * (t - 1)};
}

inline double synthetic_size(const SyntheticSpec& s, int t) {
    return s.size * (1.0 + s.scale_ramp * (t - 1));
}

inline void validate_synthetic_spec(const SyntheticSpec& s) {
    if (s.frames < 2) throw std::invalid_argument("synthetic spec: needs at least 2 frames");
    if (s.width < 32 || s.height < 32)
        throw std::invalid_argument("synthetic spec: canvas too small");
    if (s.size < 8.0) throw std::invalid_argument("synthetic spec: target smaller than 8 px");
    if (s.motion != "static" && s.motion != "linear" && s.motion != "teleport")
        throw std::invalid_argument("synthetic spec: unknown motion type " + s.motion);
    for (int t = 1; t <= s.frames; ++t) {
        const auto pos = synthetic_position(s, t);
        const double half = synthetic_size(s, t) / 2.0;
        if (pos[0] - half < 0.0 || pos[0] + half > s.width - 1.0 || pos[1] - half < 0.0 ||
            pos[1] + half > s.height - 1.0)
            throw std::invalid_argument("synthetic spec: target leaves the canvas at frame " +
                                        std::to_string(t));
    }
}

namespace detail {

// Texture cells are indexed in normalized object coordinates, so appearance
// survives scale changes; target and distracter share a texture seed and are
// therefore pixel-identical in appearance.
inline void draw_square(Image& img, double cx, double cy, double side,
                        const std::array<double, 3>& color, double texture, uint64_t tex_seed) {
    const double half = side / 2.0;
    const int x0 = std::max(0, static_cast<int>(std::ceil(cx - half)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::floor(cx + half)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(cy - half)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::floor(cy + half)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double u = (x - (cx - half)) / side;
            const double v = (y - (cy - half)) / side;
            const auto cell_u = static_cast<uint64_t>(std::clamp(u, 0.0, 0.999) * 6.0);
            const auto cell_v = static_cast<uint64_t>(std::clamp(v, 0.0, 0.999) * 6.0);
            const double tex = 1.0 + texture * (2.0 * hash01(cell_u, cell_v, tex_seed) - 1.0);
            float* px = &img.data[(static_cast<size_t>(y) * img.width + x) * 3];
            for (int c = 0; c < 3; ++c)
                px[c] = static_cast<float>(
                    std::clamp(color[static_cast<size_t>(c)] * tex, 0.0, 1.0));
        }
}

}  // namespace detail

inline Image render_synthetic_frame(const SyntheticSpec& s, int t) {
    Image img;
    img.width = s.width;
    img.height = s.height;
    img.channels = 3;
    img.data.resize(static_cast<size_t>(s.width) * s.height * 3);

    // Muted background gradient, seed-dependent phase.
    const double phase = detail::hash01(s.seed, 1, 1);
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
            float* px = &img.data[(static_cast<size_t>(y) * s.width + x) * 3];
            const double g = 0.40 + 0.12 * (static_cast<double>(y) / s.height) +
                             0.05 * std::sin((x + 40.0 * phase) * 0.05);
            for (int c = 0; c < 3; ++c)
                px[c] = static_cast<float>(
                    std::clamp(g * s.background[static_cast<size_t>(c)], 0.0, 1.0));
        }

    // Static clutter blobs (fixed positions across frames).
    for (int k = 0; k < s.clutter_count; ++k) {
        const auto ku = static_cast<uint64_t>(k);
        const double bx = s.clutter_size + detail::hash01(s.seed, ku, 11) *
                                               (s.width - 2.0 * s.clutter_size);
        const double by = s.clutter_size + detail::hash01(s.seed, ku, 12) *
                                               (s.height - 2.0 * s.clutter_size);
        const std::array<double, 3> col{0.35 + 0.3 * detail::hash01(s.seed, ku, 13),
                                        0.35 + 0.3 * detail::hash01(s.seed, ku, 14),
                                        0.35 + 0.3 * detail::hash01(s.seed, ku, 15)};
        detail::draw_square(img, bx, by, s.clutter_size, col, 0.5, s.seed ^ (ku + 101));
    }

    // Appearance drift rotates the color toward its channel permutation.
    const double drift = std::clamp(s.hue_drift * (t - 1), 0.0, 1.0);
    const std::array<double, 3> shifted{s.color[1], s.color[2], s.color[0]};
    std::array<double, 3> color;
    for (int c = 0; c < 3; ++c)
        color[static_cast<size_t>(c)] = (1.0 - drift) * s.color[static_cast<size_t>(c)] +
                                        drift * shifted[static_cast<size_t>(c)];

    const uint64_t tex_seed = s.seed ^ 0x5eedull;
    if (s.distracter) {
        const double dx = s.distracter_start[0] + s.distracter_velocity[0] * (t - 1);
        const double dy = s.distracter_start[1] + s.distracter_velocity[1] * (t - 1);
        detail::draw_square(img, dx, dy, synthetic_size(s, t), color, s.texture, tex_seed);
    }
    const auto pos = synthetic_position(s, t);
    detail::draw_square(img, pos[0], pos[1], synthetic_size(s, t), color, s.texture, tex_seed);

    if (s.noise > 0.0) {
        Rng rng(detail::mix64(s.seed ^ static_cast<uint64_t>(t)));
        for (float& v : img.data)
            v = static_cast<float>(std::clamp(v + s.noise * rng.normal(), 0.0, 1.0));
    }
    return img;
}

inline LoadedSequence synthesize(const SyntheticSpec& spec) {
    validate_synthetic_spec(spec);
    LoadedSequence seq;
    seq.name = spec.name;
    for (int t = 1; t <= spec.frames; ++t) {
        seq.frames.push_back(render_synthetic_frame(spec, t));
        const auto pos = synthetic_position(spec, t);
        const double side = synthetic_size(spec, t);
        seq.groundtruth.push_back(BoundingBox{pos[0], pos[1], side, side, 1.0});
    }
    return seq;
}

}  // namespace sdt
