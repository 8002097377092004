#include <gtest/gtest.h>

#include <cmath>

#include "atme/generator.hpp"
#include "test_support.hpp"

using namespace atme;
using atme::testing::max_grad_error;
using atme::testing::random_tensor;

namespace {

GeneratorConfig tiny_config() {
    GeneratorConfig cfg;
    cfg.in_channels = 1;
    cfg.out_channels = 1;
    cfg.embed_dim = 2;
    cfg.resolutions = {1, 2};
    cfg.attention_levels = {1};
    cfg.time_embed_dim = 4;
    return cfg;
}

}  // namespace

TEST(BasicBlock, GradcheckAllInputsAndWeights) {
    ParamSet<double> ps;
    Rng rng(41);
    BasicBlock<double> block(ps, "blk", rng, 2, 4, 6);
    for (auto& [name, v] : ps.items())
        if (v.val().max_value() == 0.0 && v.val().min_value() == 0.0)
            rng.fill_normal(v.node()->value, 0.0, 0.05);

    auto x = Var<double>::param(random_tensor({2, 2, 3, 3}, rng));
    auto emb = Var<double>::param(random_tensor({2, 6}, rng));
    const auto proj = random_tensor({2, 4, 3, 3}, rng);
    std::vector<Var<double>> leaves{x, emb};
    for (auto& [name, v] : ps.items()) leaves.push_back(v);
    const double err = max_grad_error(leaves, [&]() {
        return mean_all(mul(block(x, emb), Var<double>::leaf(proj)));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(BasicBlock, ZeroInputZeroAffineGivesZero) {
    ParamSet<double> ps;
    Rng rng(42);
    BasicBlock<double> block(ps, "blk", rng, 3, 4, 6);
    auto x = Var<double>::leaf(Tensor<double>({1, 3, 5, 5}));
    auto emb = Var<double>::leaf(Tensor<double>({1, 6}));
    auto y = block(x, emb);
    for (int64_t i = 0; i < y.val().size(); ++i) ASSERT_DOUBLE_EQ(y.val()[i], 0.0);
}

TEST(BasicBlock, PreservesSpatialSize) {
    ParamSet<float> ps;
    Rng rng(43);
    BasicBlock<float> block(ps, "blk", rng, 3, 8, 12);
    auto x = Var<float>::leaf(Tensor<float>({2, 3, 7, 9}));
    auto emb = Var<float>::leaf(Tensor<float>({2, 12}));
    EXPECT_EQ(block(x, emb).shape(), (std::vector<int>{2, 8, 7, 9}));
}

TEST(Attention, GradcheckInputAndWeights) {
    ParamSet<double> ps;
    Rng rng(44);
    AttentionBlock<double> attn(ps, "attn", rng, 4);
    for (auto& [name, v] : ps.items())
        if (v.val().max_value() == 0.0 && v.val().min_value() == 0.0)
            rng.fill_normal(v.node()->value, 0.0, 0.05);
    auto x = Var<double>::param(random_tensor({1, 4, 3, 3}, rng));
    const auto proj = random_tensor({1, 4, 3, 3}, rng);
    std::vector<Var<double>> leaves{x};
    for (auto& [name, v] : ps.items()) leaves.push_back(v);
    const double err = max_grad_error(
        leaves, [&]() { return mean_all(mul(attn(x), Var<double>::leaf(proj))); });
    EXPECT_LT(err, 1e-4);
}

TEST(Attention, WeightsPerQuerySumToOne) {
    ParamSet<float> ps;
    Rng rng(45);
    AttentionBlock<float> attn(ps, "attn", rng, 8);
    auto x = Var<float>::leaf(atme::testing::random_tensor_f({2, 8, 4, 4}, 46));
    const auto w = attn.attention_weights(x);
    ASSERT_EQ(w.shape(), (std::vector<int>{2, 16, 16}));
    for (int r = 0; r < 32; ++r) {
        double s = 0;
        for (int c = 0; c < 16; ++c) s += w[r * 16 + c];
        EXPECT_NEAR(s, 1.0, 1e-5);
    }
}

TEST(Attention, ConstantInputGivesPositionInvariantOutput) {
    ParamSet<double> ps;
    Rng rng(47);
    AttentionBlock<double> attn(ps, "attn", rng, 4);
    for (auto& [name, v] : ps.items())
        if (v.val().max_value() == 0.0 && v.val().min_value() == 0.0)
            rng.fill_normal(v.node()->value, 0.0, 0.2);
    Tensor<double> xv({1, 4, 3, 3});
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 9; ++i) xv[c * 9 + i] = 0.3 * (c + 1);
    auto y = attn(Var<double>::leaf(xv));
    EXPECT_EQ(y.shape(), xv.shape());
    for (int c = 0; c < 4; ++c)
        for (int i = 1; i < 9; ++i) EXPECT_NEAR(y.val()[c * 9 + i], y.val()[c * 9], 1e-13);
}

TEST(Attention, FreshBlockIsIdentity) {
    ParamSet<float> ps;
    Rng rng(48);
    AttentionBlock<float> attn(ps, "attn", rng, 4);
    const auto xv = atme::testing::random_tensor_f({2, 4, 3, 3}, 49);
    auto y = attn(Var<float>::leaf(xv));
    EXPECT_TRUE(bitwise_equal(y.val(), xv));
}

TEST(FourierEmbed, ZeroAndPeriodicity) {
    Tensor<double> t0({1});
    auto y0 = fourier_features(Var<double>::leaf(t0), 8);
    for (int j = 0; j < 4; ++j) {
        EXPECT_DOUBLE_EQ(y0.val()[j], 0.0);
        EXPECT_DOUBLE_EQ(y0.val()[4 + j], 1.0);
    }
    Tensor<double> ta({1}), tb({1});
    ta[0] = 0.7;
    tb[0] = 0.7 + 2.0 * M_PI;
    auto ya = fourier_features(Var<double>::leaf(ta), 8);
    auto yb = fourier_features(Var<double>::leaf(tb), 8);
    EXPECT_NEAR(ya.val()[0], yb.val()[0], 1e-12);
    EXPECT_NEAR(ya.val()[4], yb.val()[4], 1e-12);
    bool differs_elsewhere = false;
    for (const int j : {1, 2, 3, 5, 6, 7})
        if (std::abs(ya.val()[j] - yb.val()[j]) > 1e-6) differs_elsewhere = true;
    EXPECT_TRUE(differs_elsewhere);
    EXPECT_THROW(fourier_features(Var<double>::leaf(ta), 7), AtmeError);
}

TEST(UNet, DeskConfigShapesAndWidths) {
    Rng rng(50);
    GeneratorConfig cfg;
    cfg.embed_dim = 16;
    cfg.resolutions = {1, 2};
    cfg.attention_levels = {1};
    UNetGenerator<float> gen(rng, cfg);
    EXPECT_EQ(gen.encoder_widths(), (std::vector<int>{16, 32}));
    auto x = Var<float>::leaf(atme::testing::random_tensor_f({2, 3, 32, 32}, 51));
    auto t = Var<float>::leaf(Tensor<float>({2}));
    auto y = gen.forward(x, t);
    EXPECT_EQ(y.shape(), (std::vector<int>{2, 3, 32, 32}));
    EXPECT_LE(y.val().max_value(), 1.0f);
    EXPECT_GE(y.val().min_value(), -1.0f);
}

TEST(UNet, DefaultConfigEncoderWidths) {
    Rng rng(52);
    UNetGenerator<float> gen(rng, GeneratorConfig{});
    EXPECT_EQ(gen.encoder_widths(), (std::vector<int>{64, 128, 256, 512}));
}

TEST(UNet, RejectsIndivisibleSpatialSize) {
    Rng rng(53);
    UNetGenerator<float> gen(rng, tiny_config());
    auto x = Var<float>::leaf(Tensor<float>({1, 1, 6, 6}));
    auto t = Var<float>::leaf(Tensor<float>({1}));
    EXPECT_THROW(gen.forward(x, t), ConfigError);
}

TEST(UNet, ForwardCounterAndDeterminism) {
    Rng rng(54);
    UNetGenerator<float> gen(rng, tiny_config());
    auto x = Var<float>::leaf(atme::testing::random_tensor_f({1, 1, 8, 8}, 55));
    Tensor<float> tv({1});
    tv[0] = 0.25f;
    auto t = Var<float>::leaf(tv);
    EXPECT_EQ(gen.forward_calls(), 0);
    auto y1 = gen.forward(x, t);
    auto y2 = gen.forward(x, t);
    EXPECT_EQ(gen.forward_calls(), 2);
    EXPECT_TRUE(bitwise_equal(y1.val(), y2.val()));
    gen.reset_forward_calls();
    EXPECT_EQ(gen.forward_calls(), 0);
}

TEST(UNet, SkipAblationChangesOutput) {
    Rng rng(56);
    UNetGenerator<float> gen(rng, tiny_config());
    auto x = Var<float>::leaf(atme::testing::random_tensor_f({1, 1, 8, 8}, 57));
    auto t = Var<float>::leaf(Tensor<float>({1}));
    auto y = gen.forward(x, t);
    gen.set_skip_scale(0.0f);
    auto y_ablated = gen.forward(x, t);
    gen.set_skip_scale(1.0f);
    EXPECT_GT(max_abs_diff(y.val(), y_ablated.val()), 1e-6);
}

TEST(UNet, TimeInputChangesOutputAfterWarm) {
    Rng rng(58);
    UNetGenerator<float> gen(rng, tiny_config());
    for (auto& [name, v] : gen.params().items())
        if (name.find("emb_") != std::string::npos) Rng(59).fill_normal(v.node()->value, 0.0, 0.1);
    auto x = Var<float>::leaf(atme::testing::random_tensor_f({1, 1, 8, 8}, 60));
    Tensor<float> t1({1}), t2({1});
    t1[0] = 0.0f;
    t2[0] = 0.8f;
    auto y1 = gen.forward(x, Var<float>::leaf(t1));
    auto y2 = gen.forward(x, Var<float>::leaf(t2));
    EXPECT_GT(max_abs_diff(y1.val(), y2.val()), 1e-7);
}

TEST(UNetGradcheck, EndToEndThroughImageAndTime) {
    Rng rng(61);
    UNetGenerator<double> gen(rng, tiny_config());
    for (auto& [name, v] : gen.params().items())
        if (v.val().max_value() == 0.0 && v.val().min_value() == 0.0)
            rng.fill_normal(v.node()->value, 0.0, 0.05);
    auto x = Var<double>::param(random_tensor({1, 1, 8, 8}, rng, -0.8, 0.8));
    Tensor<double> tv({1});
    tv[0] = 0.3;
    auto t = Var<double>::param(tv);
    const auto proj = random_tensor({1, 1, 8, 8}, rng);
    std::vector<Var<double>> leaves{x, t};
    const double err = max_grad_error(leaves, [&]() {
        return mean_all(mul(gen.forward(x, t), Var<double>::leaf(proj)));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(UNetGradcheck, HeadWeights) {
    Rng rng(62);
    UNetGenerator<double> gen(rng, tiny_config());
    for (auto& [name, v] : gen.params().items())
        if (v.val().max_value() == 0.0 && v.val().min_value() == 0.0)
            rng.fill_normal(v.node()->value, 0.0, 0.05);
    auto x = Var<double>::leaf(random_tensor({1, 1, 8, 8}, rng, -0.8, 0.8));
    auto t = Var<double>::leaf(Tensor<double>({1}));
    const auto proj = random_tensor({1, 1, 8, 8}, rng);
    std::vector<Var<double>> leaves;
    for (auto& [name, v] : gen.params().items())
        if (name.rfind("head.", 0) == 0) leaves.push_back(v);
    ASSERT_FALSE(leaves.empty());
    const double err = max_grad_error(leaves, [&]() {
        return mean_all(mul(gen.forward(x, t), Var<double>::leaf(proj)));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(UNet, ConfigValidation) {
    Rng rng(63);
    GeneratorConfig bad = tiny_config();
    bad.embed_dim = 3;
    EXPECT_THROW(UNetGenerator<float>(rng, bad), ConfigError);
    bad = tiny_config();
    bad.resolutions = {2, 1};
    EXPECT_THROW(UNetGenerator<float>(rng, bad), ConfigError);
    bad = tiny_config();
    bad.attention_levels = {5};
    EXPECT_THROW(UNetGenerator<float>(rng, bad), ConfigError);
    EXPECT_EQ(GeneratorConfig::default_attention_levels(4), (std::vector<int>{2, 3}));
    EXPECT_EQ(GeneratorConfig::default_attention_levels(1), (std::vector<int>{0}));
}
