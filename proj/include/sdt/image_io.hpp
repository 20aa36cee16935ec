/*
 * Image file IO. OpenCV is used strictly for decoding and encoding; pixels
 * are converted to the library's own Image type (interleaved RGB floats in
 * [0,1]) at the boundary.
 */
#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "sdt/core.hpp"

namespace sdt {

inline Image load_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw std::runtime_error("cannot read image: " + path);
    if (m.depth() != CV_8U) {
        cv::Mat tmp;
        m.convertTo(tmp, CV_8U, m.depth() == CV_16U ? 1.0 / 257.0 : 255.0);
        m = tmp;
    }
    Image img;
    img.width = m.cols;
    img.height = m.rows;
    img.channels = m.channels() == 1 ? 1 : 3;
    img.data.resize(static_cast<size_t>(img.width) * img.height * img.channels);
    for (int y = 0; y < img.height; ++y) {
        const uint8_t* row = m.ptr<uint8_t>(y);
        for (int x = 0; x < img.width; ++x) {
            float* dst = &img.data[(static_cast<size_t>(y) * img.width + x) * img.channels];
            const uint8_t* src = row + static_cast<size_t>(x) * m.channels();
            if (img.channels == 1) {
                dst[0] = src[0] / 255.0f;
            } else {
                dst[0] = src[2] / 255.0f;  // OpenCV stores BGR
                dst[1] = src[1] / 255.0f;
                dst[2] = src[0] / 255.0f;
            }
        }
    }
    return img;
}

inline void save_image(const Image& img, const std::string& path) {
    cv::Mat m(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        uint8_t* row = m.ptr<uint8_t>(y);
        for (int x = 0; x < img.width; ++x) {
            const float* src = &img.data[(static_cast<size_t>(y) * img.width + x) * img.channels];
            uint8_t* dst = row + static_cast<size_t>(x) * m.channels();
            auto to8 = [](float v) {
                return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            };
            if (img.channels == 1) {
                dst[0] = to8(src[0]);
            } else {
                dst[0] = to8(src[2]);
                dst[1] = to8(src[1]);
                dst[2] = to8(src[0]);
            }
        }
    }
    if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write image: " + path);
}

// Min-max normalized grayscale rendering, for map dumps.
inline void save_heatmap(const HeatMap& map, const std::string& path) {
    double lo = map.values[0], hi = map.values[0];
    for (double v : map.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    Image img;
    img.width = map.width;
    img.height = map.height;
    img.channels = 1;
    img.data.resize(map.values.size());
    for (size_t i = 0; i < map.values.size(); ++i)
        img.data[i] = static_cast<float>((map.values[i] - lo) / span);
    save_image(img, path);
}

}  // namespace sdt
