#pragma once

#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "atme/nn.hpp"

namespace atme {

struct GeneratorConfig {
    int in_channels = 3;
    int out_channels = 3;
    int embed_dim = 64;
    std::vector<int> resolutions = {1, 2, 4, 8};
    std::vector<int> attention_levels = {2, 3};
    int time_embed_dim = 0;

    int levels() const { return static_cast<int>(resolutions.size()); }
    int time_dim() const { return time_embed_dim > 0 ? time_embed_dim : 4 * embed_dim; }

    static std::vector<int> default_attention_levels(int levels) {
        if (levels >= 2) return {levels - 2, levels - 1};
        return {0};
    }

    void validate() const {
        if (in_channels < 1 || out_channels < 1)
            throw ConfigError("generator: channel counts must be positive");
        if (embed_dim < 2 || embed_dim % 2 != 0)
            throw ConfigError("generator: embed_dim must be even and >= 2");
        if (resolutions.empty()) throw ConfigError("generator: resolutions must be non-empty");
        int prev = 0;
        for (const int r : resolutions) {
            if (r < 1 || r < prev)
                throw ConfigError("generator: resolutions must be positive and non-decreasing");
            prev = r;
        }
        for (const int a : attention_levels)
            if (a < 0 || a >= levels())
                throw ConfigError("generator: attention level out of range");
        if (time_embed_dim < 0) throw ConfigError("generator: time_embed_dim must be >= 0");
    }
};

// conv -> group norm -> affine conditioned on the time embedding -> SiLU.
// The embedding projections start at zero, so a fresh block ignores t.
template <typename T>
class BasicBlock {
  public:
    BasicBlock() = default;

    BasicBlock(ParamSet<T>& ps, const std::string& name, Rng& rng, int in_ch, int out_ch,
               int time_dim)
        : conv_(ps, name + ".conv", rng, in_ch, out_ch, 3, 1, 1),
          emb_scale_(ps, name + ".emb_scale", rng, time_dim, out_ch, 0.0),
          emb_shift_(ps, name + ".emb_shift", rng, time_dim, out_ch, 0.0),
          groups_(norm_groups_for(out_ch)) {}

    Var<T> operator()(const Var<T>& x, const Var<T>& emb) const {
        auto h = group_norm(conv_(x), groups_, T(1e-5));
        h = scale_shift(h, emb_scale_(emb), emb_shift_(emb));
        return silu(h);
    }

  private:
    Conv2d<T> conv_;
    LinearLayer<T> emb_scale_, emb_shift_;
    int groups_ = 1;
};

// Spatial self-attention over flattened positions with a residual connection.
// The output projection starts at zero, so a fresh block is the identity.
template <typename T>
class AttentionBlock {
  public:
    AttentionBlock() = default;

    AttentionBlock(ParamSet<T>& ps, const std::string& name, Rng& rng, int channels)
        : q_(ps, name + ".q", rng, channels, channels, 1, 1, 0),
          k_(ps, name + ".k", rng, channels, channels, 1, 1, 0),
          v_(ps, name + ".v", rng, channels, channels, 1, 1, 0),
          proj_(ps, name + ".proj", rng, channels, channels, 1, 1, 0, PadMode::kZero, 0.0),
          groups_(norm_groups_for(channels)) {}

    Var<T> operator()(const Var<T>& x) const {
        const auto& s = x.shape();
        const int B = s[0], C = s[1], H = s[2], W = s[3];
        auto h = group_norm(x, groups_, T(1e-5));
        auto q = reshape(q_(h), {B, C, H * W});
        auto k = reshape(k_(h), {B, C, H * W});
        auto v = reshape(v_(h), {B, C, H * W});
        auto attn = softmax_lastdim(
            mul_scalar(bmm(transpose12(q), k), static_cast<T>(1.0 / std::sqrt(double(C)))));
        auto out = reshape(bmm(v, transpose12(attn)), {B, C, H, W});
        return add(x, proj_(out));
    }

    // Attention weights for one input, for property tests.
    Tensor<T> attention_weights(const Var<T>& x) const {
        NoGradGuard ng;
        const auto& s = x.shape();
        const int B = s[0], C = s[1], H = s[2], W = s[3];
        auto h = group_norm(x, groups_, T(1e-5));
        auto q = reshape(q_(h), {B, C, H * W});
        auto k = reshape(k_(h), {B, C, H * W});
        return softmax_lastdim(
                   mul_scalar(bmm(transpose12(q), k), static_cast<T>(1.0 / std::sqrt(double(C)))))
            .val();
    }

  private:
    Conv2d<T> q_, k_, v_, proj_;
    int groups_ = 1;
};

// UNet translator conditioned on a per-sample scalar pseudo-time. One
// downsampling stage per resolution entry, middle block with attention,
// mirrored upsampling path with channel-concat skips, smoothing head.
template <typename T>
class UNetGenerator {
  public:
    explicit UNetGenerator(Rng& rng, GeneratorConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const int L = cfg_.levels();
        const int d = cfg_.embed_dim;
        const int td = cfg_.time_dim();
        widths_.resize(size_t(L));
        for (int i = 0; i < L; ++i) widths_[size_t(i)] = d * cfg_.resolutions[size_t(i)];

        time1_ = LinearLayer<T>(params_, "time.fc1", rng, d, td);
        time2_ = LinearLayer<T>(params_, "time.fc2", rng, td, td);
        stem_ = Conv2d<T>(params_, "stem", rng, cfg_.in_channels, d, 3, 1, 1);

        down_.resize(size_t(L));
        for (int i = 0; i < L; ++i) {
            const int cin = i == 0 ? d : widths_[size_t(i - 1)];
            const int c = widths_[size_t(i)];
            const std::string p = "down" + std::to_string(i);
            down_[size_t(i)].block_a = BasicBlock<T>(params_, p + ".a", rng, cin, c, td);
            down_[size_t(i)].block_b = BasicBlock<T>(params_, p + ".b", rng, c, c, td);
            down_[size_t(i)].has_attn = has_attention(i);
            if (down_[size_t(i)].has_attn)
                down_[size_t(i)].attn = AttentionBlock<T>(params_, p + ".attn", rng, c);
            down_[size_t(i)].down = Conv2d<T>(params_, p + ".down", rng, c, c, 3, 2, 1);
        }

        const int cm = widths_[size_t(L - 1)];
        mid_a_ = BasicBlock<T>(params_, "mid.a", rng, cm, cm, td);
        mid_attn_ = AttentionBlock<T>(params_, "mid.attn", rng, cm);
        mid_b_ = BasicBlock<T>(params_, "mid.b", rng, cm, cm, td);

        up_.resize(size_t(L));
        for (int i = L - 1; i >= 0; --i) {
            const int c = widths_[size_t(i)];
            const int cin = i == L - 1 ? cm : widths_[size_t(i + 1)];
            const std::string p = "up" + std::to_string(i);
            up_[size_t(i)].upconv = Conv2d<T>(params_, p + ".upconv", rng, cin, c, 3, 1, 1);
            up_[size_t(i)].block_a = BasicBlock<T>(params_, p + ".a", rng, 2 * c, c, td);
            up_[size_t(i)].block_b = BasicBlock<T>(params_, p + ".b", rng, c, c, td);
            up_[size_t(i)].has_attn = has_attention(i);
            if (up_[size_t(i)].has_attn)
                up_[size_t(i)].attn = AttentionBlock<T>(params_, p + ".attn", rng, c);
        }

        head_block_ = BasicBlock<T>(params_, "head.block", rng, d, d, td);
        head_conv_ = Conv2d<T>(params_, "head.conv", rng, d, cfg_.out_channels, 3, 1, 1);
    }

    Var<T> forward(const Var<T>& x, const Var<T>& t) const {
        const auto& s = x.shape();
        check(s.size() == 4 && s[1] == cfg_.in_channels,
              "generator: expected [B," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                  x.val().shape_str());
        const int L = cfg_.levels();
        const int div = 1 << L;
        if (s[2] % div != 0 || s[3] % div != 0)
            throw ConfigError("generator: spatial size " + std::to_string(s[2]) + "x" +
                              std::to_string(s[3]) + " not divisible by " + std::to_string(div));
        check(t.shape() == std::vector<int>{s[0]}, "generator: t must be [B]");
        forward_count_.fetch_add(1, std::memory_order_relaxed);

        auto emb = time2_(silu(time1_(fourier_features(t, cfg_.embed_dim))));
        auto h = stem_(x);
        std::vector<Var<T>> skips;
        skips.reserve(size_t(L));
        for (int i = 0; i < L; ++i) {
            const auto& st = down_[size_t(i)];
            h = st.block_b(st.block_a(h, emb), emb);
            if (st.has_attn) h = st.attn(h);
            skips.push_back(skip_scale_ == T(1) ? h : mul_scalar(h, skip_scale_));
            h = st.down(h);
        }
        h = mid_b_(mid_attn_(mid_a_(h, emb)), emb);
        for (int i = L - 1; i >= 0; --i) {
            const auto& st = up_[size_t(i)];
            h = st.upconv(upsample_nearest2x(h));
            h = concat_channels(h, skips[size_t(i)]);
            h = st.block_b(st.block_a(h, emb), emb);
            if (st.has_attn) h = st.attn(h);
        }
        return tanh_act(head_conv_(head_block_(h, emb)));
    }

    const std::vector<int>& encoder_widths() const { return widths_; }
    const GeneratorConfig& config() const { return cfg_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }

    int64_t forward_calls() const { return forward_count_.load(std::memory_order_relaxed); }
    void reset_forward_calls() { forward_count_.store(0, std::memory_order_relaxed); }
    void set_skip_scale(T s) { skip_scale_ = s; }

  private:
    bool has_attention(int level) const {
        for (const int a : cfg_.attention_levels)
            if (a == level) return true;
        return false;
    }

    struct DownStage {
        BasicBlock<T> block_a, block_b;
        bool has_attn = false;
        AttentionBlock<T> attn;
        Conv2d<T> down;
    };
    struct UpStage {
        Conv2d<T> upconv;
        BasicBlock<T> block_a, block_b;
        bool has_attn = false;
        AttentionBlock<T> attn;
    };

    GeneratorConfig cfg_;
    ParamSet<T> params_;
    std::vector<int> widths_;
    LinearLayer<T> time1_, time2_;
    Conv2d<T> stem_;
    std::vector<DownStage> down_;
    BasicBlock<T> mid_a_, mid_b_;
    AttentionBlock<T> mid_attn_;
    std::vector<UpStage> up_;
    BasicBlock<T> head_block_;
    Conv2d<T> head_conv_;
    T skip_scale_ = T(1);
    mutable std::atomic<int64_t> forward_count_{0};
};

}  // namespace atme
