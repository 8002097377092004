#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "atme/monitor.hpp"
#include "atme/rng.hpp"

namespace {

using atme::brownian_diagnostics;
using atme::BrownianReport;
using atme::EpochRecord;
using atme::equilibrium_value;
using atme::Rng;
using atme::smooth;
using atme::Tensor;

std::vector<EpochRecord> records_from(const std::vector<double>& neg_gan) {
    std::vector<EpochRecord> recs;
    for (size_t i = 0; i < neg_gan.size(); ++i) {
        EpochRecord r;
        r.epoch = int(i) + 1;
        r.neg_gan_loss = neg_gan[i];
        r.mean_entropy = 0.6 + 0.01 * double(i);
        r.t_tilde_mean = 0.5;
        r.t_tilde_std = 0.001;
        recs.push_back(r);
    }
    return recs;
}

TEST(Equilibrium, ReferenceValueIsLogFour) {
    EXPECT_DOUBLE_EQ(equilibrium_value(), std::log(4.0));
    EXPECT_NEAR(equilibrium_value(), 1.3862943611198906, 1e-15);
}

TEST(Smooth, CenteredWindowWithBoundaryShrink) {
    const std::vector<double> s = {0, 1, 2, 3, 4};
    const auto out = smooth(s, 3);
    ASSERT_EQ(out.size(), 5u);
    EXPECT_DOUBLE_EQ(out[0], 0.5);
    EXPECT_DOUBLE_EQ(out[1], 1.0);
    EXPECT_DOUBLE_EQ(out[2], 2.0);
    EXPECT_DOUBLE_EQ(out[3], 3.0);
    EXPECT_DOUBLE_EQ(out[4], 3.5);
}

TEST(Smooth, WindowOneIsIdentityAndConstantsAreFixedPoints) {
    const std::vector<double> s = {3.5, -1, 7, 0.25};
    EXPECT_EQ(smooth(s, 1), s);
    const std::vector<double> c(9, 2.75);
    EXPECT_EQ(smooth(c, 5), c);
}

TEST(Smooth, CommutesWithAffineMaps) {
    Rng rng(15);
    std::vector<double> s(20);
    for (auto& v : s) v = rng.uniform(-3, 3);
    const auto sm = smooth(s, 5);
    std::vector<double> mapped(s.size());
    for (size_t i = 0; i < s.size(); ++i) mapped[i] = 2.0 * s[i] - 1.0;
    const auto sm_mapped = smooth(mapped, 5);
    for (size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(sm_mapped[i], 2.0 * sm[i] - 1.0, 1e-12);
}

TEST(Smooth, OversizedWindowFallsBackToFullMean) {
    const std::vector<double> s = {1, 2, 3};
    const auto out = smooth(s, 99);
    for (double v : out) EXPECT_DOUBLE_EQ(v, 2.0);
    EXPECT_THROW(smooth(s, 0), atme::ConfigError);
}

TEST(EquilibriumDistance, TailAndHeadMeans) {
    // Head sits far from log 4, tail converges onto it.
    std::vector<double> series(30, 0.2);
    for (int i = 20; i < 30; ++i) series[size_t(i)] = equilibrium_value() + 0.01;
    const auto recs = records_from(series);
    const double tail = atme::distance_to_equilibrium(recs, 5, 1);
    const double head = atme::initial_distance_to_equilibrium(recs, 5, 1);
    EXPECT_NEAR(tail, 0.01, 1e-12);
    EXPECT_NEAR(head, equilibrium_value() - 0.2, 1e-12);
    EXPECT_LT(tail, head);
    EXPECT_THROW(atme::distance_to_equilibrium({}, 1), atme::AtmeError);
    EXPECT_THROW(atme::distance_to_equilibrium(recs, 31), atme::AtmeError);
}

TEST(HistoryCsv, HeaderIsPinned) {
    EXPECT_STREQ(atme::history_header(),
                 "epoch,neg_gan_loss,smoothed,mean_entropy,t_tilde_mean,t_tilde_std,"
                 "dw_autocorr,dw_kurtosis,log4_ref");
}

TEST(HistoryCsv, RoundTripsDoublesExactly) {
    Rng rng(33);
    std::vector<double> series(12);
    for (auto& v : series) v = rng.uniform(0, 2);
    auto recs = records_from(series);
    for (auto& r : recs) {
        r.dw_autocorr = rng.uniform(-1, 1);
        r.dw_kurtosis = rng.uniform(-1, 5);
    }

    const auto path = (std::filesystem::temp_directory_path() / "atme_history_test.csv").string();
    atme::emit_history(recs, path);
    const auto parsed = atme::parse_history(path);
    std::filesystem::remove(path);

    ASSERT_EQ(parsed.size(), recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(parsed[i].epoch, recs[i].epoch);
        EXPECT_EQ(parsed[i].neg_gan_loss, recs[i].neg_gan_loss);
        EXPECT_EQ(parsed[i].mean_entropy, recs[i].mean_entropy);
        EXPECT_EQ(parsed[i].t_tilde_mean, recs[i].t_tilde_mean);
        EXPECT_EQ(parsed[i].t_tilde_std, recs[i].t_tilde_std);
        EXPECT_EQ(parsed[i].dw_autocorr, recs[i].dw_autocorr);
        EXPECT_EQ(parsed[i].dw_kurtosis, recs[i].dw_kurtosis);
    }
}

TEST(HistoryCsv, EveryRowCarriesTheLogFourReference) {
    const auto recs = records_from({0.5, 1.0, 1.5});
    const std::string csv = atme::render_history_csv(recs);
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    int rows = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ++rows;
        const auto last = line.rfind(',');
        EXPECT_DOUBLE_EQ(std::stod(line.substr(last + 1)), equilibrium_value());
    }
    EXPECT_EQ(rows, 3);
}

TEST(HistoryCsv, ParseRejectsWrongHeaderAndMalformedRows) {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "atme_history_bad.csv").string();
    {
        std::ofstream f(path);
        f << "epoch,wrong\n";
    }
    EXPECT_THROW(atme::parse_history(path), atme::AtmeError);
    {
        std::ofstream f(path);
        f << atme::history_header() << "\n1,not_a_number\n";
    }
    EXPECT_THROW(atme::parse_history(path), atme::AtmeError);
    fs::remove(path);
}

TEST(PlotHistory, WritesAReadablePng) {
    namespace fs = std::filesystem;
    Rng rng(8);
    std::vector<double> series(40);
    for (size_t i = 0; i < series.size(); ++i)
        series[i] = equilibrium_value() - 1.0 / double(i + 1) + rng.uniform(-0.05, 0.05);
    const auto path = (fs::temp_directory_path() / "atme_plot_test.png").string();
    atme::plot_history(records_from(series), path);
    const cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
    fs::remove(path);
    ASSERT_FALSE(img.empty());
    EXPECT_EQ(img.cols, 960);
    EXPECT_EQ(img.rows, 600);
}

Tensor<float> const_map(float v) { return Tensor<float>::full({1, 1, 4, 4}, v); }

TEST(BrownianDiag, NeedsThreeSnapshotsAndMatchingShapes) {
    EXPECT_THROW(brownian_diagnostics({const_map(0), const_map(1)}), atme::AtmeError);
    EXPECT_THROW(brownian_diagnostics(
                     {const_map(0), const_map(1), Tensor<float>({1, 1, 2, 2})}),
                 atme::AtmeError);
}

TEST(BrownianDiag, ConstantHistoryFlagsDegenerateVariance) {
    const auto rep = brownian_diagnostics({const_map(0.3f), const_map(0.3f), const_map(0.3f)});
    EXPECT_TRUE(rep.degenerate_variance);
}

TEST(BrownianDiag, LinearDriftFlagsDegenerateVariance) {
    // Identical increments everywhere: variance is exactly zero even though
    // the values move.
    const auto rep =
        brownian_diagnostics({const_map(0.0f), const_map(0.1f), const_map(0.2f), const_map(0.3f)});
    EXPECT_TRUE(rep.degenerate_variance);
}

TEST(BrownianDiag, IidGaussianIncrementsLookBrownian) {
    Rng rng(101);
    std::vector<Tensor<float>> hist;
    Tensor<float> w({1, 1, 16, 16});
    hist.push_back(w);
    for (int t = 0; t < 24; ++t) {
        Tensor<float> step({1, 1, 16, 16});
        rng.fill_normal(step, 0.0, 0.02);
        for (int64_t i = 0; i < w.size(); ++i) w[i] += step[i];
        hist.push_back(w);
    }
    const auto rep = brownian_diagnostics(hist);
    EXPECT_FALSE(rep.degenerate_variance);
    EXPECT_EQ(rep.n_increments, int64_t(16 * 16 * 24));
    // Null behavior: weak autocorrelation, near-zero skew, near-zero excess
    // kurtosis. Bounds are loose 5-sigma-ish envelopes for n = 6144.
    EXPECT_LT(std::abs(rep.lag1_autocorr), 0.07);
    EXPECT_LT(std::abs(rep.skewness), 0.2);
    EXPECT_LT(std::abs(rep.excess_kurtosis), 0.4);
}

TEST(BrownianDiag, AlternatingHistoryHasStrongNegativeAutocorr) {
    // Increments flip sign every step but carry per-pixel jitter, so the
    // variance is finite and the lag-1 autocorrelation is close to -1.
    Rng rng(55);
    Tensor<float> base({1, 1, 8, 8});
    rng.fill_normal(base, 0.0, 0.05);
    std::vector<Tensor<float>> hist;
    for (int t = 0; t < 12; ++t) {
        Tensor<float> w({1, 1, 8, 8});
        for (int64_t i = 0; i < w.size(); ++i) w[i] = (t % 2 == 0) ? base[i] : -base[i];
        hist.push_back(w);
    }
    const auto rep = brownian_diagnostics(hist);
    EXPECT_FALSE(rep.degenerate_variance);
    EXPECT_LT(rep.lag1_autocorr, -0.9);
}

}  // namespace
