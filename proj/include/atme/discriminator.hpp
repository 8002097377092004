#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "atme/nn.hpp"

namespace atme {

struct DiscriminatorConfig {
    int base_channels = 64;
    int n_layers = 3;
    int input_channels = 6;

    void validate() const {
        if (base_channels < 1) throw ConfigError("discriminator: base_channels must be >= 1");
        if (n_layers < 1) throw ConfigError("discriminator: n_layers must be >= 1");
        if (input_channels < 1) throw ConfigError("discriminator: input_channels must be >= 1");
    }
};

// Markovian patch discriminator over the channel-concatenated (source,
// candidate) pair: n_layers stride-2 4x4 convolutions doubling channels
// (capped at 8x base), two stride-1 4x4 convolutions, one-logit output map.
// Instance normalization carries frozen statistics in backward so each
// logit's input gradient stays strictly inside its receptive field.
template <typename T>
class PatchDiscriminator {
  public:
    PatchDiscriminator(Rng& rng, DiscriminatorConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const auto plan = channel_plan(cfg_);
        convs_.reserve(plan.size());
        normed_.reserve(plan.size());
        int cin = cfg_.input_channels;
        for (size_t li = 0; li < plan.size(); ++li) {
            const auto [cout, stride, with_norm] = plan[li];
            convs_.emplace_back(params_, "layer" + std::to_string(li), rng, cin, cout, 4, stride,
                                1);
            normed_.push_back(with_norm);
            cin = cout;
        }
    }

    Var<T> forward(const Var<T>& source, const Var<T>& candidate) const {
        check(source.shape().size() == 4 && source.shape() == candidate.shape() &&
                  source.shape()[1] + candidate.shape()[1] == cfg_.input_channels,
              "discriminator: source/candidate shape mismatch");
        return forward_concat(concat_channels(source, candidate));
    }

    Var<T> forward_concat(const Var<T>& xy, std::vector<NormStats<T>>* capture = nullptr,
                          const std::vector<NormStats<T>>* pinned = nullptr) const {
        check(xy.shape().size() == 4 && xy.shape()[1] == cfg_.input_channels,
              "discriminator: expected " + std::to_string(cfg_.input_channels) +
                  " input channels, got " + xy.val().shape_str());
        if (capture) capture->clear();
        size_t norm_idx = 0;
        Var<T> h = xy;
        for (size_t li = 0; li < convs_.size(); ++li) {
            h = convs_[li](h);
            const bool last = li + 1 == convs_.size();
            if (normed_[li]) {
                NormStats<T> got;
                const NormStats<T>* pin = pinned ? &(*pinned)[norm_idx] : nullptr;
                h = group_norm_frozen_stats(h, h.shape()[1], T(1e-5), capture ? &got : nullptr,
                                            pin);
                if (capture) capture->push_back(std::move(got));
                ++norm_idx;
            }
            if (!last) h = leaky_relu(h, T(0.2));
        }
        return h;
    }

    // (kernel, stride) for every conv in the stack.
    static std::vector<std::pair<int, int>> layer_stack(int n_layers) {
        std::vector<std::pair<int, int>> ks;
        for (int i = 0; i < n_layers; ++i) ks.emplace_back(4, 2);
        ks.emplace_back(4, 1);
        ks.emplace_back(4, 1);
        return ks;
    }

    static int rf_from_layers(const std::vector<std::pair<int, int>>& layers) {
        int rf = 1;
        int stride_prod = 1;
        for (const auto& [k, s] : layers) {
            rf += (k - 1) * stride_prod;
            stride_prod *= s;
        }
        return rf;
    }

    static int receptive_field(const DiscriminatorConfig& cfg) {
        return rf_from_layers(layer_stack(cfg.n_layers));
    }

    static std::pair<int, int> output_hw(int h, int w, int n_layers) {
        for (const auto& [k, s] : layer_stack(n_layers)) {
            h = conv_out_size(h, k, s, 1);
            w = conv_out_size(w, k, s, 1);
        }
        return {h, w};
    }

    // Closed-form input window of one logit along one axis, before clipping:
    // walk the stack backward mapping output intervals to input intervals.
    static std::pair<int, int> logit_span(int p, int n_layers) {
        const auto layers = layer_stack(n_layers);
        int a = p, b = p;
        for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
            const auto [k, s] = *it;
            a = a * s - 1;
            b = b * s - 1 + k - 1;
        }
        return {a, b};
    }

    struct ProbeReport {
        int checked = 0;
        int violations = 0;
        int dead_centers = 0;
        bool ok() const { return checked > 0 && violations == 0 && dead_centers == 0; }
    };

    // Full-scan locality probe: backpropagate each logit to the input and
    // verify the nonzero support never leaves the closed-form window, while
    // the window's own center responds.
    ProbeReport patch_independence_probe(const Tensor<T>& source,
                                         const Tensor<T>& candidate) const {
        check(source.dim(0) == 1 && candidate.dim(0) == 1, "probe: expected batch size 1");
        params_.set_requires_grad(false);
        auto src = Var<T>::leaf(source, true);
        auto cand = Var<T>::leaf(candidate, true);
        auto logits = forward(src, cand);
        const int H = source.dim(2), W = source.dim(3);
        const int Nh = logits.shape()[2], Nw = logits.shape()[3];
        ProbeReport rep;
        for (int iy = 0; iy < Nh; ++iy) {
            for (int ix = 0; ix < Nw; ++ix) {
                src.zero_grad();
                cand.zero_grad();
                backward(pick(logits, int64_t(iy) * Nw + ix));
                const auto [ya, yb] = logit_span(iy, cfg_.n_layers);
                const auto [xa, xb] = logit_span(ix, cfg_.n_layers);
                bool outside_hit = false, center_hit = false;
                const int cy = std::clamp((ya + yb) / 2, 0, H - 1);
                const int cx = std::clamp((xa + xb) / 2, 0, W - 1);
                for (const auto& g : {src.grad(), cand.grad()}) {
                    const int C = g.dim(1);
                    for (int c = 0; c < C; ++c)
                        for (int y = 0; y < H; ++y)
                            for (int x = 0; x < W; ++x) {
                                const T v = g[((0 * C + c) * int64_t(H) + y) * W + x];
                                if (v == T(0)) continue;
                                if (y < ya || y > yb || x < xa || x > xb) outside_hit = true;
                                if (y == cy && x == cx) center_hit = true;
                            }
                }
                rep.checked++;
                if (outside_hit) rep.violations++;
                if (!center_hit) rep.dead_centers++;
            }
        }
        params_.set_requires_grad(true);
        return rep;
    }

    const DiscriminatorConfig& config() const { return cfg_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }

  private:
    // (out_channels, stride, normed) per conv layer.
    static std::vector<std::tuple<int, int, bool>> channel_plan(const DiscriminatorConfig& cfg) {
        std::vector<std::tuple<int, int, bool>> plan;
        int mult = 1;
        plan.emplace_back(cfg.base_channels, 2, false);
        for (int i = 1; i < cfg.n_layers; ++i) {
            mult = std::min(1 << i, 8);
            plan.emplace_back(cfg.base_channels * mult, 2, true);
        }
        mult = std::min(1 << cfg.n_layers, 8);
        plan.emplace_back(cfg.base_channels * mult, 1, true);
        plan.emplace_back(1, 1, false);
        return plan;
    }

    DiscriminatorConfig cfg_;
    mutable ParamSet<T> params_;
    std::vector<Conv2d<T>> convs_;
    std::vector<bool> normed_;
};

}  // namespace atme
