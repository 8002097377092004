// End-to-end acceptance suite. Each test covers one numbered criterion and
// prints a single [CRITERION n] PASS/FAIL line from TearDown, so the verdict
// survives early-exit assertion failures.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "atme/kid.hpp"
#include "atme/settings.hpp"
#include "atme/toy_dataset.hpp"
#include "atme/trainer.hpp"
#include "test_support.hpp"

namespace {

namespace fs = std::filesystem;
using atme::testing::max_grad_error;
using atme::testing::random_tensor;

class Acceptance : public ::testing::Test {
  protected:
    void SetUp() override { start_ = std::chrono::steady_clock::now(); }

    void Criterion(int n, std::string what) {
        n_ = n;
        what_ = std::move(what);
    }

    double elapsed_s() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    void TearDown() override {
        std::printf("[CRITERION %2d] %s: %s\n", n_, HasFailure() ? "FAIL" : "PASS",
                    what_.c_str());
        std::fflush(stdout);
    }

  private:
    int n_ = 0;
    std::string what_;
    std::chrono::steady_clock::time_point start_;
};

atme::ModelConfig desk_model() {
    atme::ModelConfig mc;
    mc.image_size = 64;
    mc.gen.embed_dim = 16;
    mc.gen.resolutions = {1, 2};
    mc.gen.attention_levels = {};
    mc.disc.base_channels = 32;
    mc.disc.n_layers = 2;
    mc.bridge.hidden_channels = 8;
    return mc;
}

class ToyData {
  public:
    ToyData(const std::string& tag, int n_pairs, uint64_t seed, int size) {
        root_ = fs::temp_directory_path() / ("atme_acceptance_" + tag);
        fs::remove_all(root_);
        atme::write_toy_dataset(root_.string(), "train", n_pairs, seed, size);
    }
    ~ToyData() { fs::remove_all(root_); }

    atme::PairedImageDataset dataset(int crop, int jitter) const {
        atme::AugmentPolicy p;
        p.crop_size = crop;
        p.jitter_resize = jitter;
        return atme::PairedImageDataset(root_.string(), "train", atme::Direction::kAToB, p);
    }

  private:
    fs::path root_;
};

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

TEST_F(Acceptance, C01_EquilibriumAndEntropyIdentities) {
    Criterion(1, "all-1/2 maps give -log 4; patch entropy peaks uniquely at (1/2,1/2) = log 2");

    // All-1/2 decision maps are zero logits on both the real and fake side.
    const atme::Tensor<double> zero_logits({2, 1, 30, 30});
    const double v = atme::gan_objective_from_logits(zero_logits, zero_logits);
    EXPECT_NEAR(v, -std::log(4.0), 1e-9);

    // Exhaustive grid over a 2-patch map, step 1e-3 on the open square.
    double best = -1.0;
    int best_i = 0, best_j = 0, ties = 0;
    atme::Tensor<double> two({2});
    for (int i = 1; i <= 999; ++i) {
        for (int j = 1; j <= 999; ++j) {
            two[0] = i * 1e-3;
            two[1] = j * 1e-3;
            const double h = atme::mean_patch_entropy(two, 0.0);
            if (h > best) {
                best = h;
                best_i = i;
                best_j = j;
                ties = 1;
            } else if (h == best) {
                ++ties;
            }
        }
    }
    EXPECT_EQ(best_i, 500);
    EXPECT_EQ(best_j, 500);
    EXPECT_EQ(ties, 1);
    EXPECT_NEAR(best, std::log(2.0), 1e-9);
    EXPECT_LT(elapsed_s(), 5.0);
}

TEST_F(Acceptance, C02_CorruptionAndPseudoTimeExactness) {
    Criterion(2, "x_t = x0 + x0*W and t~ = mean(W) match elementwise oracles");

    atme::Rng rng(402);
    const int B = 3, C = 3, H = 16, W = 16;

    // Zero noise map leaves the input bit-identical.
    auto x0 = atme::Var<double>::leaf(random_tensor({B, C, H, W}, rng));
    auto w_zero = atme::Var<double>::leaf(atme::Tensor<double>({B, 1, H, W}));
    EXPECT_TRUE(atme::bitwise_equal(atme::corrupt_input(x0, w_zero).val(), x0.val()));

    // Constant maps give back the constant.
    atme::Tensor<double> w_const({B, 1, H, W});
    const double consts[B] = {-0.25, 0.0625, 0.75};
    for (int b = 0; b < B; ++b)
        for (int64_t i = 0; i < int64_t(H) * W; ++i) w_const[b * H * W + i] = consts[b];
    const auto t_const = atme::estimate_time(atme::Var<double>::leaf(w_const)).val();
    for (int b = 0; b < B; ++b) EXPECT_NEAR(t_const[b], consts[b], 1e-12);

    // Random maps against elementwise double oracles.
    auto w_rand = atme::Var<double>::leaf(random_tensor({B, 1, H, W}, rng, -0.5, 0.5));
    const auto x_t = atme::corrupt_input(x0, w_rand).val();
    const auto t = atme::estimate_time(w_rand).val();
    const int64_t hw = int64_t(H) * W;
    for (int b = 0; b < B; ++b) {
        double acc = 0;
        for (int64_t i = 0; i < hw; ++i) acc += w_rand.val()[b * hw + i];
        EXPECT_NEAR(t[b], acc / double(hw), 1e-12);
        for (int c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i) {
                const int64_t xi = (int64_t(b) * C + c) * hw + i;
                EXPECT_NEAR(x_t[xi], x0.val()[xi] * (1.0 + w_rand.val()[b * hw + i]), 1e-12)
                    << "b=" << b << " c=" << c << " i=" << i;
            }
    }
    EXPECT_LT(elapsed_s(), 5.0);
}

TEST_F(Acceptance, C03_ZeroedWReducesToPlainConditionalGan) {
    Criterion(3, "zeroed+frozen W makes a training step match the plain conditional GAN step");

    ToyData data("reduction", 8, 403, 32);
    atme::ModelConfig mc = desk_model();
    mc.image_size = 32;
    mc.gen.embed_dim = 8;
    mc.disc.base_channels = 16;
    mc.bridge.hidden_channels = 4;
    atme::TrainConfig tc;
    tc.epochs_const = tc.epochs_decay = 1;
    tc.batch_size = 4;
    tc.seed = 403;
    tc.probe_samples = 4;

    atme::Trainer<float> with_w(mc, tc);
    for (auto [name, v] : with_w.w_params().items()) v.val().fill(0.0f);
    with_w.w_params().set_requires_grad(false);

    atme::Trainer<float> plain(mc, tc);
    plain.set_bridge_bypass(true);

    const auto batch = data.dataset(32, 36).make_batch({0, 1, 2, 3});
    const auto a = with_w.train_step(batch, 1, 0);
    const auto b = plain.train_step(batch, 1, 0);
    EXPECT_NEAR(a.d_loss, b.d_loss, 1e-6);
    EXPECT_NEAR(a.g_loss, b.g_loss, 1e-6);
    EXPECT_NEAR(a.l1, b.l1, 1e-6);
    EXPECT_EQ(a.t_tilde_mean, 0.0);
}

TEST_F(Acceptance, C04_ArchitectureGeometry) {
    Criterion(4, "30x30 map and receptive field 70 at defaults; widths 64/128/256/512; "
                 "shapes hold on 20 random configs");

    const atme::DiscriminatorConfig dc;
    const auto [mh, mw] = atme::PatchDiscriminator<float>::output_hw(256, 256, dc.n_layers);
    EXPECT_EQ(mh, 30);
    EXPECT_EQ(mw, 30);
    const int rf = atme::PatchDiscriminator<float>::receptive_field(dc);
    EXPECT_EQ(rf, 70);

    // Gradient-masking probe at 128x128: backprop a single interior logit and
    // measure the extent of the nonzero input gradient.
    {
        atme::Rng rng(404);
        atme::PatchDiscriminator<double> disc(rng, dc);
        disc.params().set_requires_grad(false);
        const int S = 128;
        auto x0 = atme::Var<double>::param(random_tensor({1, 3, S, S}, rng));
        auto y = atme::Var<double>::leaf(random_tensor({1, 3, S, S}, rng));
        auto z = disc.forward(x0, y);
        const int oh = z.shape()[2], ow = z.shape()[3];
        const int64_t center = int64_t(oh / 2) * ow + ow / 2;
        atme::backward(atme::pick(z, center));
        const auto& g = x0.grad();
        int y0 = S, y1 = -1, x0e = S, x1 = -1;
        for (int yy = 0; yy < S; ++yy)
            for (int xx = 0; xx < S; ++xx) {
                bool nz = false;
                for (int c = 0; c < 3 && !nz; ++c)
                    nz = g[(int64_t(c) * S + yy) * S + xx] != 0.0;
                if (!nz) continue;
                y0 = std::min(y0, yy);
                y1 = std::max(y1, yy);
                x0e = std::min(x0e, xx);
                x1 = std::max(x1, xx);
            }
        EXPECT_EQ(y1 - y0 + 1, rf);
        EXPECT_EQ(x1 - x0e + 1, rf);
    }

    {
        atme::Rng rng(405);
        atme::GeneratorConfig gc;
        atme::UNetGenerator<float> gen(rng, gc);
        EXPECT_EQ(gen.encoder_widths(), (std::vector<int>{64, 128, 256, 512}));
    }

    atme::Rng cfg_rng(406);
    for (int trial = 0; trial < 20; ++trial) {
        atme::DiscriminatorConfig rdc;
        rdc.n_layers = 1 + int(cfg_rng.uniform_int(3));
        rdc.base_channels = 4 << cfg_rng.uniform_int(3);
        const int image = 32 + 16 * int(cfg_rng.uniform_int(3));
        atme::Rng init(407 + uint64_t(trial));
        atme::PatchDiscriminator<float> disc(init, rdc);
        auto z = disc.forward(
            atme::Var<float>::leaf(atme::Tensor<float>({1, 3, image, image})),
            atme::Var<float>::leaf(atme::Tensor<float>({1, 3, image, image})));
        const auto [eh, ew] = atme::PatchDiscriminator<float>::output_hw(image, image,
                                                                         rdc.n_layers);
        EXPECT_EQ(z.shape(), (std::vector<int>{1, 1, eh, ew})) << "trial " << trial;

        atme::GeneratorConfig rgc;
        rgc.embed_dim = 8 << cfg_rng.uniform_int(2);
        rgc.resolutions = cfg_rng.uniform_int(2) == 0 ? std::vector<int>{1, 2}
                                                      : std::vector<int>{1, 2, 4};
        rgc.attention_levels = {int(rgc.resolutions.size()) - 1};
        const int gsize = (1 << rgc.resolutions.size()) * (2 + int(cfg_rng.uniform_int(2)));
        atme::UNetGenerator<float> gen(init, rgc);
        std::vector<int> widths;
        for (int r : rgc.resolutions) widths.push_back(rgc.embed_dim * r);
        EXPECT_EQ(gen.encoder_widths(), widths) << "trial " << trial;
        auto out = gen.forward(
            atme::Var<float>::leaf(atme::Tensor<float>({1, 3, gsize, gsize})),
            atme::Var<float>::leaf(atme::Tensor<float>({1})));
        EXPECT_EQ(out.shape(), (std::vector<int>{1, 3, gsize, gsize})) << "trial " << trial;

        const int map = 2 + int(cfg_rng.uniform_int(6));
        const int target = map * (1 << (1 + cfg_rng.uniform_int(3)));
        atme::ParamSet<float> ps;
        atme::BridgeConfig bc;
        bc.hidden_channels = 4;
        atme::WTransform<float> wt(ps, "w", init, bc, map, map, target, target);
        auto wmap = wt(atme::Var<float>::leaf(atme::Tensor<float>::full({2, 1, map, map}, 0.5f)));
        EXPECT_EQ(wmap.shape(), (std::vector<int>{2, 1, target, target})) << "trial " << trial;
    }
}

TEST_F(Acceptance, C05_BlockGradientChecks) {
    Criterion(5, "analytic gradients of every learned block match central differences");

    constexpr double kTol = 1e-4;
    atme::Rng rng(501);

    {
        atme::ParamSet<double> ps;
        atme::BasicBlock<double> block(ps, "b", rng, 3, 4, 6);
        auto x = atme::Var<double>::param(random_tensor({2, 3, 5, 5}, rng));
        auto emb = atme::Var<double>::param(random_tensor({2, 6}, rng));
        const auto proj = random_tensor({2, 4, 5, 5}, rng);
        std::vector<atme::Var<double>> leaves{x, emb};
        for (const auto& [name, v] : ps.items()) leaves.push_back(v);
        const double err = max_grad_error(leaves, [&]() {
            return atme::mean_all(atme::mul(block(x, emb), atme::Var<double>::leaf(proj)));
        });
        EXPECT_LT(err, kTol) << "basic block";
    }

    {
        atme::ParamSet<double> ps;
        atme::AttentionBlock<double> attn(ps, "a", rng, 4);
        auto x = atme::Var<double>::param(random_tensor({1, 4, 4, 4}, rng));
        const auto proj = random_tensor({1, 4, 4, 4}, rng);
        std::vector<atme::Var<double>> leaves{x};
        for (const auto& [name, v] : ps.items()) leaves.push_back(v);
        const double err = max_grad_error(leaves, [&]() {
            return atme::mean_all(atme::mul(attn(x), atme::Var<double>::leaf(proj)));
        });
        EXPECT_LT(err, kTol) << "attention block";
    }

    {
        atme::ParamSet<double> ps;
        atme::BridgeConfig bc;
        bc.hidden_channels = 3;
        atme::WTransform<double> wt(ps, "w", rng, bc, 3, 3, 12, 12);
        auto d = atme::Var<double>::param(random_tensor({1, 1, 3, 3}, rng, 0.05, 0.95));
        const auto proj = random_tensor({1, 1, 12, 12}, rng);
        std::vector<atme::Var<double>> leaves{d};
        for (const auto& [name, v] : ps.items()) leaves.push_back(v);
        const double err = max_grad_error(leaves, [&]() {
            return atme::mean_all(atme::mul(wt(d), atme::Var<double>::leaf(proj)));
        });
        EXPECT_LT(err, kTol) << "w transform";
    }

    {
        // Generator head: final conv behind a tanh, checked through the
        // composition so the saturation region is exercised.
        atme::ParamSet<double> ps;
        atme::Conv2d<double> head(ps, "h", rng, 4, 3, 3, 1, 1);
        auto x = atme::Var<double>::param(random_tensor({1, 4, 5, 5}, rng));
        const auto proj = random_tensor({1, 3, 5, 5}, rng);
        std::vector<atme::Var<double>> leaves{x};
        for (const auto& [name, v] : ps.items()) leaves.push_back(v);
        const double err = max_grad_error(leaves, [&]() {
            return atme::mean_all(
                atme::mul(atme::tanh_act(head(x)), atme::Var<double>::leaf(proj)));
        });
        EXPECT_LT(err, kTol) << "generator head";
    }

    {
        // Discriminator layer: strided conv, frozen-stats normalization with
        // the stats pinned so finite differences see the same constants the
        // analytic pass does, then leaky ReLU.
        atme::ParamSet<double> ps;
        atme::Conv2d<double> conv(ps, "d", rng, 3, 4, 4, 2, 1);
        auto x = atme::Var<double>::param(random_tensor({1, 3, 8, 8}, rng));
        const auto proj = random_tensor({1, 4, 4, 4}, rng);
        atme::NormStats<double> stats;
        {
            atme::NoGradGuard ng;
            atme::group_norm_frozen_stats<double>(conv(x), 4, 1e-5, &stats);
        }
        std::vector<atme::Var<double>> leaves{x};
        for (const auto& [name, v] : ps.items()) leaves.push_back(v);
        const double err = max_grad_error(leaves, [&]() {
            auto h = atme::group_norm_frozen_stats<double>(conv(x), 4, 1e-5, nullptr, &stats);
            return atme::mean_all(
                atme::mul(atme::leaky_relu(h, 0.2), atme::Var<double>::leaf(proj)));
        });
        EXPECT_LT(err, kTol) << "discriminator layer";
    }
    EXPECT_LT(elapsed_s(), 120.0);
}

TEST_F(Acceptance, C06_KidOracle) {
    Criterion(6, "unbiased MMD matches brute force on 200 small sets; self-KID mean within 3 std");

    atme::Rng rng(601);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + int(rng.uniform_int(7));
        const int m = 2 + int(rng.uniform_int(7));
        const int d = 3 + int(rng.uniform_int(4));
        atme::FeatureSet X, Y;
        X.extractor_id = Y.extractor_id = "oracle";
        X.features.resize(n, d);
        Y.features.resize(m, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) X.features(i, j) = rng.normal(0.0, 1.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j) Y.features(i, j) = rng.normal(0.0, 1.0);

        auto k = [d](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
            double dot = 0;
            for (int i = 0; i < d; ++i) dot += a[i] * b[i];
            const double base = dot / double(d) + 1.0;
            return base * base * base;
        };
        double kxx = 0, kyy = 0, kxy = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j) kxx += k(X.features.row(i), X.features.row(j));
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                if (i != j) kyy += k(Y.features.row(i), Y.features.row(j));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) kxy += k(X.features.row(i), Y.features.row(j));
        const double oracle = kxx / (double(n) * (n - 1)) + kyy / (double(m) * (m - 1)) -
                              2.0 * kxy / (double(n) * m);

        ASSERT_NEAR(atme::mmd2_unbiased(X, Y), oracle, 1e-12) << "trial " << trial;
    }

    atme::FeatureSet pool;
    pool.extractor_id = "oracle";
    pool.features.resize(64, 8);
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 8; ++j) pool.features(i, j) = rng.normal(0.0, 1.0);
    const atme::KidResult self = atme::kid(pool, pool, 16, 50, 602);
    EXPECT_LT(std::abs(self.mean), 3.0 * self.std);
}

TEST_F(Acceptance, C07_ToyConvergenceToLog4) {
    Criterion(7, "desk run drives smoothed -L_GAN to within 0.35 of log 4 with entropy > 0.55");

    ToyData data("convergence", 500, 11, 64);
    const auto dataset = data.dataset(64, 70);

    atme::TrainConfig tc;
    tc.epochs_const = 40;
    tc.epochs_decay = 40;
    tc.batch_size = 8;
    tc.seed = 7;
    tc.monitor_window = 5;
    tc.probe_samples = 16;
    atme::Trainer<float> trainer(desk_model(), tc);

    const auto hist = trainer.train(dataset);
    ASSERT_EQ(hist.size(), 80u);

    const double final_dist = atme::distance_to_equilibrium(hist, 10, tc.monitor_window);
    const double first_dist = atme::initial_distance_to_equilibrium(hist, 10, tc.monitor_window);
    double tail_entropy = 0;
    for (size_t i = hist.size() - 10; i < hist.size(); ++i) tail_entropy += hist[i].mean_entropy;
    tail_entropy /= 10.0;

    std::printf("  toy run: first-10 distance %.4f, final-10 distance %.4f, "
                "final-10 entropy %.4f\n",
                first_dist, final_dist, tail_entropy);
    EXPECT_LT(final_dist, 0.35);
    EXPECT_LT(final_dist, first_dist);
    EXPECT_GT(tail_entropy, 0.55);
    EXPECT_LT(elapsed_s(), 2700.0);
}

TEST_F(Acceptance, C08_SinglePassInference) {
    Criterion(8, "one generator forward per inferred image; fixed seeds are bit-reproducible");

    atme::ModelConfig mc = desk_model();
    mc.image_size = 32;
    mc.gen.embed_dim = 8;
    mc.disc.base_channels = 16;
    mc.bridge.hidden_channels = 4;
    atme::TrainConfig tc;
    tc.seed = 800;
    atme::Trainer<float> trainer(mc, tc);

    const int n = 6;
    std::vector<atme::Tensor<float>> images;
    for (int i = 0; i < n; ++i)
        images.push_back(atme::testing::random_tensor_f({1, 3, 32, 32}, 810 + uint64_t(i)));

    trainer.generator().reset_forward_calls();
    std::vector<atme::Tensor<float>> first;
    for (int i = 0; i < n; ++i) first.push_back(trainer.infer(images[size_t(i)], uint64_t(i)));
    EXPECT_EQ(trainer.generator().forward_calls(), n);

    for (int i = 0; i < n; ++i)
        EXPECT_TRUE(atme::bitwise_equal(first[size_t(i)],
                                        trainer.infer(images[size_t(i)], uint64_t(i))))
            << "image " << i;
}

TEST_F(Acceptance, C09_CheckpointResumeByteFidelity) {
    Criterion(9, "save/load/resume reproduces the straight run's history CSV byte-for-byte");

    ToyData data("resume", 24, 900, 64);
    const auto dataset = data.dataset(64, 70);
    atme::TrainConfig tc;
    tc.epochs_const = 3;
    tc.epochs_decay = 3;
    tc.batch_size = 8;
    tc.seed = 900;
    tc.probe_samples = 8;

    const auto csv_straight = (fs::temp_directory_path() / "atme_c9_straight.csv").string();
    const auto csv_resumed = (fs::temp_directory_path() / "atme_c9_resumed.csv").string();
    const auto ckpt = (fs::temp_directory_path() / "atme_c9_mid.ckpt").string();

    atme::Trainer<float> straight(desk_model(), tc);
    straight.train(dataset);
    atme::emit_history(straight.history(), csv_straight, tc.monitor_window);

    atme::Trainer<float> first_half(desk_model(), tc);
    first_half.train(dataset, 3);
    first_half.save(ckpt);

    atme::Trainer<float> resumed(desk_model(), tc);
    resumed.load(ckpt);
    resumed.train(dataset);
    atme::emit_history(resumed.history(), csv_resumed, tc.monitor_window);

    const std::string straight_bytes = file_bytes(csv_straight);
    EXPECT_FALSE(straight_bytes.empty());
    EXPECT_EQ(straight_bytes, file_bytes(csv_resumed));

    fs::remove(csv_straight);
    fs::remove(csv_resumed);
    fs::remove(ckpt);
}

TEST_F(Acceptance, C10_BrownianDiagnosticsOnSyntheticNulls) {
    Criterion(10, "Gaussian increments stay within 3/sqrt(n) in >= 95 of 100 trials; "
                  "alternating increments read below -0.9");

    const int side = 24, snapshots = 8;
    const int64_t px = int64_t(side) * side;
    int within = 0;
    for (int trial = 0; trial < 100; ++trial) {
        atme::Rng rng(atme::derive_seed(1000, "null_trial", uint64_t(trial)));
        std::vector<atme::Tensor<float>> w(snapshots, atme::Tensor<float>({1, 1, side, side}));
        for (int t = 1; t < snapshots; ++t)
            for (int64_t i = 0; i < px; ++i)
                w[size_t(t)][i] = w[size_t(t - 1)][i] + float(rng.normal(0.0, 0.01));
        const auto rep = atme::brownian_diagnostics(w);
        ASSERT_FALSE(rep.degenerate_variance) << "trial " << trial;
        if (std::abs(rep.lag1_autocorr) < 3.0 / std::sqrt(double(rep.n_increments))) ++within;
    }
    EXPECT_GE(within, 95);

    std::vector<atme::Tensor<float>> alt(6, atme::Tensor<float>({1, 1, side, side}));
    for (int t = 1; t < 6; ++t)
        for (int64_t i = 0; i < px; ++i)
            alt[size_t(t)][i] = alt[size_t(t - 1)][i] + ((t + i) % 2 == 0 ? 0.05f : -0.05f);
    const auto rep = atme::brownian_diagnostics(alt);
    EXPECT_LT(rep.lag1_autocorr, -0.9);
}

}  // namespace
