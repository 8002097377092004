#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "atme/rng.hpp"

namespace atme {

// Procedural paired dataset: side A is 1-3 colored shapes on a light
// background, side B is the matching white-on-black silhouette. The mapping
// A -> B is a deterministic function of A's geometry, which is what makes a
// small trainer converge quickly. Generation is a pure function of (seed,
// index), so regenerated datasets are bit-identical.
inline cv::Mat render_toy_composite(uint64_t seed, uint64_t index, int size) {
    Rng rng(derive_seed(seed, "toy_sample", index));
    cv::Mat a(size, size, CV_8UC3);
    const cv::Vec3b bg(uint8_t(rng.uniform_int(81) + 160), uint8_t(rng.uniform_int(81) + 160),
                       uint8_t(rng.uniform_int(81) + 160));
    a.setTo(cv::Scalar(bg[0], bg[1], bg[2]));
    cv::Mat b(size, size, CV_8UC3, cv::Scalar(0, 0, 0));

    const int n_shapes = 1 + int(rng.uniform_int(3));
    for (int s = 0; s < n_shapes; ++s) {
        int ch[3] = {int(rng.uniform_int(91)), int(rng.uniform_int(91)), int(rng.uniform_int(91))};
        ch[rng.uniform_int(3)] = 170 + int(rng.uniform_int(86));
        const cv::Scalar color(ch[0], ch[1], ch[2]);
        const cv::Scalar white(255, 255, 255);

        const int margin = size / 6;
        const int cx = margin + int(rng.uniform_int(size - 2 * margin));
        const int cy = margin + int(rng.uniform_int(size - 2 * margin));
        const int r = size / 10 + int(rng.uniform_int(std::max(1, size / 6)));
        const int kind = int(rng.uniform_int(3));
        if (kind == 0) {
            cv::circle(a, {cx, cy}, r, color, cv::FILLED);
            cv::circle(b, {cx, cy}, r, white, cv::FILLED);
        } else if (kind == 1) {
            const cv::Rect rect(cx - r, cy - r, 2 * r, 2 * r);
            cv::rectangle(a, rect, color, cv::FILLED);
            cv::rectangle(b, rect, white, cv::FILLED);
        } else {
            const std::vector<cv::Point> tri{{cx, cy - r}, {cx - r, cy + r}, {cx + r, cy + r}};
            cv::fillConvexPoly(a, tri, color);
            cv::fillConvexPoly(b, tri, white);
        }
    }

    cv::Mat composite(size, 2 * size, CV_8UC3);
    a.copyTo(composite(cv::Rect(0, 0, size, size)));
    b.copyTo(composite(cv::Rect(size, 0, size, size)));
    return composite;
}

inline void write_toy_dataset(const std::string& root, const std::string& split, int n_pairs,
                              uint64_t seed, int size = 64) {
    check(n_pairs >= 1 && size >= 16, "toy dataset: need n_pairs >= 1 and size >= 16");
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(root) / split;
    fs::create_directories(dir);
    for (int i = 0; i < n_pairs; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05d.png", i);
        const cv::Mat composite = render_toy_composite(seed, uint64_t(i), size);
        if (!cv::imwrite((dir / name).string(), composite))
            throw DataError("toy dataset: cannot write " + (dir / name).string());
    }
}

}  // namespace atme
