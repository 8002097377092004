#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "atme/tensor.hpp"

namespace atme {

inline double equilibrium_value() { return std::log(4.0); }

struct EpochRecord {
    int epoch = 0;
    double neg_gan_loss = 0;
    double mean_entropy = 0;
    double t_tilde_mean = 0;
    double t_tilde_std = 0;
    double dw_autocorr = 0;
    double dw_kurtosis = 0;
};

// Centered moving average with shrinking windows at the boundaries (the
// half-width is (window-1)/2, so even windows behave like the next lower odd
// one). window larger than the series falls back to the full-series mean.
inline std::vector<double> smooth(const std::vector<double>& series, int window) {
    if (window < 1) throw ConfigError("smooth: window must be >= 1");
    const int n = int(series.size());
    if (n == 0) return {};
    if (window > n) {
        std::cerr << "warning: smoothing window " << window << " exceeds series length " << n
                  << "; using the full-series mean\n";
        double m = 0;
        for (double v : series) m += v;
        m /= n;
        return std::vector<double>(size_t(n), m);
    }
    const int h = (window - 1) / 2;
    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int a = std::max(0, i - h), b = std::min(n - 1, i + h);
        double m = 0;
        for (int j = a; j <= b; ++j) m += series[size_t(j)];
        out[size_t(i)] = m / double(b - a + 1);
    }
    return out;
}

inline std::vector<double> neg_gan_series(const std::vector<EpochRecord>& records) {
    std::vector<double> s;
    s.reserve(records.size());
    for (const auto& r : records) s.push_back(r.neg_gan_loss);
    return s;
}

// |mean of the smoothed -L_GAN series over the last `tail` epochs - log 4|.
inline double distance_to_equilibrium(const std::vector<EpochRecord>& records, int tail,
                                      int window = 5) {
    if (records.empty()) throw AtmeError("distance_to_equilibrium: empty history");
    check(tail >= 1 && tail <= int(records.size()),
          "distance_to_equilibrium: tail must be in [1, history length]");
    const auto sm = smooth(neg_gan_series(records), window);
    double m = 0;
    for (size_t i = sm.size() - size_t(tail); i < sm.size(); ++i) m += sm[i];
    m /= double(tail);
    return std::abs(m - equilibrium_value());
}

// Same, over the first `head` epochs; used to compare early vs late phases.
inline double initial_distance_to_equilibrium(const std::vector<EpochRecord>& records, int head,
                                              int window = 5) {
    if (records.empty()) throw AtmeError("distance_to_equilibrium: empty history");
    check(head >= 1 && head <= int(records.size()),
          "distance_to_equilibrium: head must be in [1, history length]");
    const auto sm = smooth(neg_gan_series(records), window);
    double m = 0;
    for (int i = 0; i < head; ++i) m += sm[size_t(i)];
    m /= double(head);
    return std::abs(m - equilibrium_value());
}

struct BrownianReport {
    double lag1_autocorr = 0;
    double skewness = 0;
    double excess_kurtosis = 0;
    bool degenerate_variance = false;
    int64_t n_increments = 0;
};

// Moment diagnostics of the per-pixel increments of a noise-map history:
// pooled lag-1 autocorrelation of consecutive increments, plus skewness and
// excess kurtosis of the pooled increment distribution. Purely descriptive;
// a (near-)zero increment variance is flagged instead of divided by.
inline BrownianReport brownian_diagnostics(const std::vector<Tensor<float>>& w_history) {
    if (w_history.size() < 3)
        throw AtmeError("brownian_diagnostics: need at least 3 snapshots, got " +
                        std::to_string(w_history.size()));
    const auto& shape = w_history.front().shape();
    for (const auto& w : w_history)
        check(w.shape() == shape, "brownian_diagnostics: snapshot shapes differ");
    const int64_t px = w_history.front().size();
    const int64_t steps = int64_t(w_history.size()) - 1;

    std::vector<double> inc(size_t(px * steps));
    for (int64_t t = 0; t < steps; ++t)
        for (int64_t i = 0; i < px; ++i)
            inc[size_t(t * px + i)] =
                double(w_history[size_t(t + 1)][i]) - double(w_history[size_t(t)][i]);

    BrownianReport rep;
    rep.n_increments = px * steps;
    double mean = 0;
    for (double v : inc) mean += v;
    mean /= double(inc.size());
    double m2 = 0, m3 = 0, m4 = 0;
    for (double v : inc) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= double(inc.size());
    m3 /= double(inc.size());
    m4 /= double(inc.size());
    if (m2 < 1e-24) {
        rep.degenerate_variance = true;
        return rep;
    }
    rep.skewness = m3 / std::pow(m2, 1.5);
    rep.excess_kurtosis = m4 / (m2 * m2) - 3.0;

    // Lag-1: pair increment t with increment t+1, pooled over pixels.
    if (steps >= 2) {
        double ma = 0, mb = 0;
        const int64_t pairs = px * (steps - 1);
        for (int64_t t = 0; t + 1 < steps; ++t)
            for (int64_t i = 0; i < px; ++i) {
                ma += inc[size_t(t * px + i)];
                mb += inc[size_t((t + 1) * px + i)];
            }
        ma /= double(pairs);
        mb /= double(pairs);
        double num = 0, va = 0, vb = 0;
        for (int64_t t = 0; t + 1 < steps; ++t)
            for (int64_t i = 0; i < px; ++i) {
                const double a = inc[size_t(t * px + i)] - ma;
                const double b = inc[size_t((t + 1) * px + i)] - mb;
                num += a * b;
                va += a * a;
                vb += b * b;
            }
        if (va < 1e-24 || vb < 1e-24)
            rep.degenerate_variance = true;
        else
            rep.lag1_autocorr = num / std::sqrt(va * vb);
    }
    return rep;
}

// CSV with a stable column order plus the constant log-4 reference column.
// Values are printed with %.17g so a reparse reproduces the doubles exactly.
inline const char* history_header() {
    return "epoch,neg_gan_loss,smoothed,mean_entropy,t_tilde_mean,t_tilde_std,dw_autocorr,"
           "dw_kurtosis,log4_ref";
}

inline std::string render_history_csv(const std::vector<EpochRecord>& records, int window = 5) {
    std::string out = history_header();
    out += "\n";
    const auto sm = records.empty() ? std::vector<double>{} : smooth(neg_gan_series(records), window);
    char buf[512];
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        std::snprintf(buf, sizeof(buf),
                      "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                      r.neg_gan_loss, sm[i], r.mean_entropy, r.t_tilde_mean, r.t_tilde_std,
                      r.dw_autocorr, r.dw_kurtosis, equilibrium_value());
        out += buf;
    }
    return out;
}

inline void emit_history(const std::vector<EpochRecord>& records, const std::string& path,
                         int window = 5) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw AtmeError("emit_history: cannot write " + path);
    f << render_history_csv(records, window);
    if (!f) throw AtmeError("emit_history: write failed for " + path);
}

inline std::vector<EpochRecord> parse_history(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw AtmeError("parse_history: cannot read " + path);
    std::string line;
    if (!std::getline(f, line) || line != history_header())
        throw AtmeError("parse_history: unexpected header in " + path);
    std::vector<EpochRecord> records;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        EpochRecord r;
        char comma;
        double smoothed, ref;
        is >> r.epoch >> comma >> r.neg_gan_loss >> comma >> smoothed >> comma >>
            r.mean_entropy >> comma >> r.t_tilde_mean >> comma >> r.t_tilde_std >> comma >>
            r.dw_autocorr >> comma >> r.dw_kurtosis >> comma >> ref;
        if (is.fail()) throw AtmeError("parse_history: malformed row '" + line + "'");
        records.push_back(r);
    }
    return records;
}

// Convergence rendering: raw and smoothed -L_GAN curves against the log 4
// reference line.
inline void plot_history(const std::vector<EpochRecord>& records, const std::string& path,
                         int window = 5) {
    if (records.empty()) throw AtmeError("plot_history: empty history");
    const int W = 960, H = 600, ml = 70, mr = 20, mt = 40, mb = 50;
    cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

    const auto raw = neg_gan_series(records);
    const auto sm = smooth(raw, window);
    double lo = equilibrium_value(), hi = equilibrium_value();
    for (double v : raw) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double pad = std::max(0.05, (hi - lo) * 0.1);
    lo -= pad;
    hi += pad;

    auto px = [&](size_t i) {
        const double t = records.size() == 1 ? 0.5 : double(i) / double(records.size() - 1);
        return ml + int(t * (W - ml - mr));
    };
    auto py = [&](double v) { return mt + int((hi - v) / (hi - lo) * (H - mt - mb)); };

    cv::rectangle(img, {ml, mt}, {W - mr, H - mb}, cv::Scalar(0, 0, 0), 1);
    const int yref = py(equilibrium_value());
    for (int x = ml; x < W - mr; x += 12)
        cv::line(img, {x, yref}, {std::min(x + 6, W - mr), yref}, cv::Scalar(60, 60, 200), 1);
    cv::putText(img, "log 4", {W - mr - 60, yref - 6}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(60, 60, 200), 1);

    for (size_t i = 1; i < records.size(); ++i) {
        cv::line(img, {px(i - 1), py(raw[i - 1])}, {px(i), py(raw[i])},
                 cv::Scalar(200, 180, 160), 1);
        cv::line(img, {px(i - 1), py(sm[i - 1])}, {px(i), py(sm[i])}, cv::Scalar(160, 80, 0), 2);
    }
    cv::putText(img, "-L_GAN per epoch (raw, smoothed)", {ml, mt - 12},
                cv::FONT_HERSHEY_SIMPLEX, 0.55, cv::Scalar(0, 0, 0), 1);
    cv::putText(img, "epoch", {W / 2 - 20, H - 14}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                cv::Scalar(0, 0, 0), 1);
    if (!cv::imwrite(path, img)) throw AtmeError("plot_history: cannot write " + path);
}

}  // namespace atme
