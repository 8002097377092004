#pragma once

#include <cstdint>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "atme/tensor.hpp"

namespace atme {

// Images cross this boundary as CHW tensors, RGB order: uint8 in [0,255] on
// the disk side, float in [-1,1] on the model side.

inline Tensor<uint8_t> mat_to_chw(const cv::Mat& rgb) {
    check(rgb.type() == CV_8UC3, "mat_to_chw: expected 8-bit 3-channel image");
    Tensor<uint8_t> t({3, rgb.rows, rgb.cols});
    const int64_t hw = int64_t(rgb.rows) * rgb.cols;
    for (int y = 0; y < rgb.rows; ++y) {
        const cv::Vec3b* row = rgb.ptr<cv::Vec3b>(y);
        for (int x = 0; x < rgb.cols; ++x)
            for (int c = 0; c < 3; ++c) t[c * hw + int64_t(y) * rgb.cols + x] = row[x][c];
    }
    return t;
}

inline cv::Mat chw_to_mat(const Tensor<uint8_t>& t) {
    check(t.ndim() == 3 && t.dim(0) == 3, "chw_to_mat: expected [3,H,W]");
    const int h = t.dim(1), w = t.dim(2);
    const int64_t hw = int64_t(h) * w;
    cv::Mat rgb(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        cv::Vec3b* row = rgb.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) row[x][c] = t[c * hw + int64_t(y) * w + x];
    }
    return rgb;
}

// Decodes any readable image to RGB uint8 CHW; gray and alpha inputs are
// converted to 3 channels.
inline Tensor<uint8_t> load_image_rgb(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (img.empty()) throw DataError("unreadable image file: " + path);
    if (img.depth() != CV_8U) throw DataError("unsupported bit depth (want 8-bit): " + path);
    cv::Mat rgb;
    switch (img.channels()) {
        case 1: cv::cvtColor(img, rgb, cv::COLOR_GRAY2RGB); break;
        case 3: cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB); break;
        case 4: cv::cvtColor(img, rgb, cv::COLOR_BGRA2RGB); break;
        default: throw DataError("unsupported channel count in " + path);
    }
    return mat_to_chw(rgb);
}

inline void save_image_rgb(const std::string& path, const Tensor<uint8_t>& chw) {
    cv::Mat bgr;
    cv::cvtColor(chw_to_mat(chw), bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path, bgr)) throw DataError("cannot write image file: " + path);
}

// v -> v/127.5 - 1, the [-1,1] model range.
inline Tensor<float> normalize_image(const Tensor<uint8_t>& u8) {
    Tensor<float> out(u8.shape());
    for (int64_t i = 0; i < u8.size(); ++i)
        out[i] = static_cast<float>(u8[i]) / 127.5f - 1.0f;
    return out;
}

inline Tensor<uint8_t> denormalize_image(const Tensor<float>& f) {
    Tensor<uint8_t> out(f.shape());
    for (int64_t i = 0; i < f.size(); ++i) {
        const float v = (f[i] + 1.0f) * 127.5f;
        out[i] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f)));
    }
    return out;
}

inline Tensor<uint8_t> resize_image(const Tensor<uint8_t>& chw, int h, int w) {
    check(h >= 1 && w >= 1, "resize_image: target must be positive");
    if (chw.dim(1) == h && chw.dim(2) == w) return chw;
    cv::Mat out;
    cv::resize(chw_to_mat(chw), out, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
    return mat_to_chw(out);
}

inline Tensor<uint8_t> crop_image(const Tensor<uint8_t>& chw, int y0, int x0, int h, int w) {
    check(y0 >= 0 && x0 >= 0 && y0 + h <= chw.dim(1) && x0 + w <= chw.dim(2),
          "crop_image: window outside image");
    Tensor<uint8_t> out({3, h, w});
    const int64_t src_hw = int64_t(chw.dim(1)) * chw.dim(2);
    const int64_t dst_hw = int64_t(h) * w;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out[c * dst_hw + int64_t(y) * w + x] =
                    chw[c * src_hw + int64_t(y0 + y) * chw.dim(2) + (x0 + x)];
    return out;
}

inline Tensor<uint8_t> hflip_image(const Tensor<uint8_t>& chw) {
    const int h = chw.dim(1), w = chw.dim(2);
    Tensor<uint8_t> out(chw.shape());
    const int64_t hw = int64_t(h) * w;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out[c * hw + int64_t(y) * w + x] = chw[c * hw + int64_t(y) * w + (w - 1 - x)];
    return out;
}

}  // namespace atme
