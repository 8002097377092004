#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "atme/nn.hpp"

namespace atme {

struct BridgeConfig {
    int hidden_channels = 16;
    double inference_sigma = 0.001;
    double output_scale = 1.0;

    void validate() const {
        if (hidden_channels < 1) throw ConfigError("bridge: hidden_channels must be >= 1");
        if (inference_sigma <= 0) throw ConfigError("bridge: inference_sigma must be > 0");
        if (output_scale <= 0) throw ConfigError("bridge: output_scale must be > 0");
    }
};

// Learnable lift from the decision-map grid to an image-space noise map:
// channel lift, then (resize x2 -> 3x3 conv -> SiLU) stages up to the image
// resolution, then a near-zero head squashed by tanh and scaled. Replicate
// padding keeps constant inputs exactly constant through the whole stack.
template <typename T>
class WTransform {
  public:
    WTransform() = default;

    WTransform(ParamSet<T>& ps, const std::string& name, Rng& rng, BridgeConfig cfg, int map_h,
               int map_w, int image_h, int image_w)
        : cfg_(cfg), map_h_(map_h), map_w_(map_w), image_h_(image_h), image_w_(image_w) {
        cfg_.validate();
        check(map_h >= 1 && map_w >= 1 && image_h >= map_h && image_w >= map_w,
              "w_transform: image must be at least as large as the decision map");
        stages_ = std::max(required_stages(map_h, image_h), required_stages(map_w, image_w));
        conv_in_ = Conv2d<T>(ps, name + ".in", rng, 1, cfg_.hidden_channels, 3, 1, 1,
                             PadMode::kReplicate);
        stage_convs_.reserve(size_t(stages_));
        for (int i = 0; i < stages_; ++i)
            stage_convs_.emplace_back(ps, name + ".stage" + std::to_string(i), rng,
                                      cfg_.hidden_channels, cfg_.hidden_channels, 3, 1, 1,
                                      PadMode::kReplicate);
        conv_out_ = Conv2d<T>(ps, name + ".out", rng, cfg_.hidden_channels, 1, 3, 1, 1,
                              PadMode::kReplicate, 1e-3);
    }

    static int required_stages(int from, int to) {
        check(from >= 1 && to >= from, "w_transform: invalid upsample extents");
        int stages = 0;
        int cur = from;
        while (cur < to) {
            cur = std::min(2 * cur, to);
            ++stages;
        }
        return stages;
    }

    // D_prev probabilities [B,1,Nh,Nw] -> noise map [B,1,H,W].
    Var<T> operator()(const Var<T>& d_prev) const {
        const auto& s = d_prev.shape();
        check(s.size() == 4 && s[1] == 1 && s[2] == map_h_ && s[3] == map_w_,
              "w_transform: expected [B,1," + std::to_string(map_h_) + "," +
                  std::to_string(map_w_) + "], got " + d_prev.val().shape_str());
        auto h = silu(conv_in_(d_prev));
        int ch = map_h_, cw = map_w_;
        for (int i = 0; i < stages_; ++i) {
            ch = std::min(2 * ch, image_h_);
            cw = std::min(2 * cw, image_w_);
            h = silu(stage_convs_[size_t(i)](resize_nearest(h, ch, cw)));
        }
        check(ch == image_h_ && cw == image_w_, "w_transform: upsample path missed target size");
        return mul_scalar(tanh_act(conv_out_(h)), static_cast<T>(cfg_.output_scale));
    }

    int stages() const { return stages_; }
    const BridgeConfig& config() const { return cfg_; }

  private:
    BridgeConfig cfg_;
    int map_h_ = 0, map_w_ = 0, image_h_ = 0, image_w_ = 0;
    int stages_ = 0;
    Conv2d<T> conv_in_;
    std::vector<Conv2d<T>> stage_convs_;
    Conv2d<T> conv_out_;
};

// Input corruption x_t = x0 + x0 * w, with w broadcast over channels.
template <typename T>
Var<T> corrupt_input(const Var<T>& x0, const Var<T>& w) {
    return add(x0, mul_channel_broadcast(x0, w));
}

// Pseudo-time: per-sample mean of the noise map, [B,1,H,W] -> [B].
template <typename T>
Var<T> estimate_time(const Var<T>& w) {
    return mean_per_sample(w);
}

// Maximum-entropy decision state: i.i.d. Normal(0.5, sigma), clamped into
// the open unit interval.
template <typename T>
Tensor<T> sample_inference_state(const std::vector<int>& shape, uint64_t seed,
                                 double sigma = 0.001) {
    Rng rng(seed);
    Tensor<T> t(shape);
    constexpr T lo = T(1e-6), hi = T(1) - T(1e-6);
    for (int64_t i = 0; i < t.size(); ++i)
        t[i] = std::clamp(static_cast<T>(rng.normal(0.5, sigma)), lo, hi);
    return t;
}

// Per-sample store of the previous-epoch decision maps. Unseen ids get the
// deterministic cold-start state (seeded by the id, so arrival order never
// matters). Single writer, concurrent readers.
class DecisionStateStore {
  public:
    explicit DecisionStateStore(uint64_t seed = 0, double sigma = 0.001)
        : seed_(seed), sigma_(sigma) {}

    Tensor<float> get(const std::string& sample_id, const std::vector<int>& map_shape) const {
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = entries_.find(sample_id);
            if (it != entries_.end()) {
                check(it->second.shape() == map_shape,
                      "decision store: stored map shape changed for " + sample_id);
                return it->second;
            }
        }
        return sample_inference_state<float>(map_shape,
                                             derive_seed(seed_, hash_name(sample_id)), sigma_);
    }

    void put(const std::string& sample_id, Tensor<float> probs) {
        check(probs.all_finite(), "decision store: non-finite probabilities for " + sample_id);
        constexpr float lo = 1e-6f, hi = 1.0f - 1e-6f;
        for (int64_t i = 0; i < probs.size(); ++i) probs[i] = std::clamp(probs[i], lo, hi);
        std::lock_guard<std::mutex> lock(mu_);
        if (on_put) on_put(sample_id, probs);
        entries_[sample_id] = std::move(probs);
    }

    bool contains(const std::string& sample_id) const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_.count(sample_id) > 0;
    }

    size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_.size();
    }

    int epoch_tag() const { return epoch_tag_; }
    void set_epoch_tag(int t) { epoch_tag_ = t; }
    uint64_t seed() const { return seed_; }
    double sigma() const { return sigma_; }

    // Sorted-key snapshot for serialization.
    std::vector<std::pair<std::string, Tensor<float>>> snapshot() const {
        std::lock_guard<std::mutex> lock(mu_);
        return {entries_.begin(), entries_.end()};
    }

    void restore(std::vector<std::pair<std::string, Tensor<float>>> entries, int epoch_tag) {
        std::lock_guard<std::mutex> lock(mu_);
        entries_.clear();
        for (auto& [id, t] : entries) entries_[id] = std::move(t);
        epoch_tag_ = epoch_tag;
    }

    // Test hook observing every store write.
    std::function<void(const std::string&, const Tensor<float>&)> on_put;

  private:
    uint64_t seed_;
    double sigma_;
    int epoch_tag_ = 0;
    mutable std::mutex mu_;
    std::map<std::string, Tensor<float>> entries_;
};

}  // namespace atme
