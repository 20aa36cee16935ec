/*
 * Shared geometric and raster primitives: images, bounding boxes, heat maps,
 * multi-channel stacks, bilinear resampling and Gaussian target maps.
 *
 * Conventions used everywhere:
 *   - origin at the top-left corner, x grows rightward, y grows downward
 *   - pixel centers sit at integer coordinates; resampling is center-aligned
 *   - box centers are continuous; a box covers [cx-w/2, cx+w/2] x [cy-h/2, cy+h/2]
 *   - heat maps are double precision, images single precision
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdt {

// Axis-aligned target region. `scale` is the size multiplier relative to the
// first-frame box, so w == scale * w_first and h == scale * h_first.
struct BoundingBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;
    double scale = 1.0;

    double left() const { return cx - 0.5 * w; }
    double top() const { return cy - 0.5 * h; }
    double right() const { return cx + 0.5 * w; }
    double bottom() const { return cy + 0.5 * h; }
    double area() const { return w * h; }

    static BoundingBox from_tlwh(double x, double y, double w, double h) {
        return BoundingBox{x + 0.5 * w, y + 0.5 * h, w, h, 1.0};
    }

    bool valid() const {
        return w > 0.0 && h > 0.0 && scale > 0.0 && std::isfinite(cx) && std::isfinite(cy);
    }
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.left(), b.left()));
    const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top()));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

inline double center_error(const BoundingBox& a, const BoundingBox& b) {
    return std::hypot(a.cx - b.cx, a.cy - b.cy);
}

// Row-major interleaved intensity image, values normalized to [0,1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {
        if (w <= 0 || h <= 0 || (c != 1 && c != 3))
            throw std::invalid_argument("Image: bad dimensions");
    }

    bool is_color() const { return channels == 3; }

    float& at(int x, int y, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }

    // Clamped bilinear sample; (fx, fy) in pixel-center coordinates.
    float sample(double fx, double fy, int c) const {
        fx = std::clamp(fx, 0.0, static_cast<double>(width - 1));
        fy = std::clamp(fy, 0.0, static_cast<double>(height - 1));
        const int x0 = static_cast<int>(fx);
        const int y0 = static_cast<int>(fy);
        const int x1 = std::min(x0 + 1, width - 1);
        const int y1 = std::min(y0 + 1, height - 1);
        const double ax = fx - x0;
        const double ay = fy - y0;
        const double v00 = at(x0, y0, c), v10 = at(x1, y0, c);
        const double v01 = at(x0, y1, c), v11 = at(x1, y1, c);
        return static_cast<float>((v00 * (1 - ax) + v10 * ax) * (1 - ay) +
                                  (v01 * (1 - ax) + v11 * ax) * ay);
    }
};

// Single-channel confidence surface.
struct HeatMap {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    HeatMap() = default;
    HeatMap(int w, int h, double fill = 0.0)
        : width(w), height(h), values(static_cast<size_t>(w) * h, fill) {
        if (w <= 0 || h <= 0) throw std::invalid_argument("HeatMap: bad dimensions");
    }

    double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }

    double sample(double fx, double fy) const {
        fx = std::clamp(fx, 0.0, static_cast<double>(width - 1));
        fy = std::clamp(fy, 0.0, static_cast<double>(height - 1));
        const int x0 = static_cast<int>(fx);
        const int y0 = static_cast<int>(fy);
        const int x1 = std::min(x0 + 1, width - 1);
        const int y1 = std::min(y0 + 1, height - 1);
        const double ax = fx - x0;
        const double ay = fy - y0;
        return (at(x0, y0) * (1 - ax) + at(x1, y0) * ax) * (1 - ay) +
               (at(x0, y1) * (1 - ax) + at(x1, y1) * ax) * ay;
    }

    double max_value() const {
        double m = -std::numeric_limits<double>::infinity();
        for (double v : values) m = std::max(m, v);
        return m;
    }
};

// Channel-major stack of equally sized planes; the working layout for both
// shallow and deep feature banks.
struct ChannelStack {
    int channels = 0;
    int width = 0;
    int height = 0;
    std::vector<double> data;  // [c][y][x]

    ChannelStack() = default;
    ChannelStack(int c, int w, int h, double fill = 0.0)
        : channels(c), width(w), height(h),
          data(static_cast<size_t>(c) * w * h, fill) {}

    size_t plane_size() const { return static_cast<size_t>(width) * height; }
    double* plane(int c) { return data.data() + c * plane_size(); }
    const double* plane(int c) const { return data.data() + c * plane_size(); }

    double at(int c, int x, int y) const { return plane(c)[static_cast<size_t>(y) * width + x]; }
    double& at(int c, int x, int y) { return plane(c)[static_cast<size_t>(y) * width + x]; }
};

namespace detail {

// Center-aligned source coordinate for output pixel `xo` when resizing
// a length `src_n` axis to `dst_n`.
inline double resample_coord(double xo, int src_n, int dst_n) {
    return (xo + 0.5) * static_cast<double>(src_n) / dst_n - 0.5;
}

}  // namespace detail

inline HeatMap resize_bilinear(const HeatMap& src, int dst_w, int dst_h) {
    if (dst_w <= 0 || dst_h <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
    if (dst_w == src.width && dst_h == src.height) return src;
    HeatMap out(dst_w, dst_h);
    for (int y = 0; y < dst_h; ++y) {
        const double fy = detail::resample_coord(y, src.height, dst_h);
        for (int x = 0; x < dst_w; ++x)
            out.at(x, y) = src.sample(detail::resample_coord(x, src.width, dst_w), fy);
    }
    return out;
}

inline Image resize_bilinear(const Image& src, int dst_w, int dst_h) {
    if (dst_w <= 0 || dst_h <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
    if (dst_w == src.width && dst_h == src.height) return src;
    Image out(dst_w, dst_h, src.channels);
    for (int y = 0; y < dst_h; ++y) {
        const double fy = detail::resample_coord(y, src.height, dst_h);
        for (int x = 0; x < dst_w; ++x) {
            const double fx = detail::resample_coord(x, src.width, dst_w);
            for (int c = 0; c < src.channels; ++c)
                out.at(x, y, c) = src.sample(fx, fy, c);
        }
    }
    return out;
}

// Gaussian target map: peak value 1 at the box center, std proportional to
// the box size. The box must already be expressed in map coordinates.
inline HeatMap gaussian_map(const BoundingBox& box, int map_w, int map_h,
                            double sigma_factor = 0.25) {
    if (box.cx < 0.0 || box.cx > map_w - 1 || box.cy < 0.0 || box.cy > map_h - 1)
        throw std::invalid_argument("gaussian_map: box center outside map (coordinate mapping bug?)");
    const double sx = std::max(1e-6, sigma_factor * box.w);
    const double sy = std::max(1e-6, sigma_factor * box.h);
    HeatMap out(map_w, map_h);
    for (int y = 0; y < map_h; ++y) {
        const double dy = (y - box.cy) / sy;
        for (int x = 0; x < map_w; ++x) {
            const double dx = (x - box.cx) / sx;
            out.at(x, y) = std::exp(-0.5 * (dx * dx + dy * dy));
        }
    }
    return out;
}

// Square (or rectangular) window crop resampled to a fixed raster.
// Samples are clamped at the frame border, so the window may legally
// overhang the frame.
inline Image crop_resize(const Image& src, double cx, double cy, double win_w, double win_h,
                         int out_w, int out_h) {
    if (win_w <= 0.0 || win_h <= 0.0) throw std::invalid_argument("crop_resize: bad window");
    Image out(out_w, out_h, src.channels);
    for (int y = 0; y < out_h; ++y) {
        const double fy = cy - 0.5 * win_h + (y + 0.5) * win_h / out_h;
        for (int x = 0; x < out_w; ++x) {
            const double fx = cx - 0.5 * win_w + (x + 0.5) * win_w / out_w;
            for (int c = 0; c < src.channels; ++c)
                out.at(x, y, c) = src.sample(fx, fy, c);
        }
    }
    return out;
}

inline Image to_grayscale(const Image& src) {
    if (src.channels == 1) return src;
    Image out(src.width, src.height, 1);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            out.at(x, y, 0) = (src.at(x, y, 0) + src.at(x, y, 1) + src.at(x, y, 2)) / 3.0f;
    return out;
}

}  // namespace sdt
