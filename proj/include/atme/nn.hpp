#pragma once

#include <string>
#include <utility>
#include <vector>

#include "atme/ops.hpp"
#include "atme/rng.hpp"

namespace atme {

// Named parameter registry. Iteration follows registration order (used by the
// optimizer); name lookups serve checkpoint (de)serialization.
template <typename T>
class ParamSet {
  public:
    Var<T> add(const std::string& name, Tensor<T> init) {
        for (const auto& [n, v] : items_)
            check(n != name, "ParamSet: duplicate parameter name " + name);
        items_.emplace_back(name, Var<T>::param(std::move(init)));
        return items_.back().second;
    }

    const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }

    Var<T> find(const std::string& name) const {
        for (const auto& [n, v] : items_)
            if (n == name) return v;
        throw CheckpointError("ParamSet: unknown parameter " + name);
    }

    int64_t scalar_count() const {
        int64_t n = 0;
        for (const auto& [name, v] : items_) n += v.val().size();
        return n;
    }

    void set_requires_grad(bool b) {
        for (auto& [name, v] : items_) v.set_requires_grad(b);
    }

    void zero_grad() {
        for (auto& [name, v] : items_) v.zero_grad();
    }

    bool any_grad_nonempty() const {
        for (const auto& [name, v] : items_)
            if (v.has_grad()) return true;
        return false;
    }

  private:
    std::vector<std::pair<std::string, Var<T>>> items_;
};

// Convolution module; weights N(0, wstd), zero bias. wstd == 0 gives an
// exactly-zero layer (used where training should start as the identity path).
template <typename T>
class Conv2d {
  public:
    Conv2d() = default;

    Conv2d(ParamSet<T>& ps, const std::string& name, Rng& rng, int in_ch, int out_ch, int k,
           int stride, int pad, PadMode mode = PadMode::kZero, double wstd = 0.02)
        : stride_(stride), pad_(pad), mode_(mode) {
        Tensor<T> w({out_ch, in_ch, k, k});
        if (wstd > 0) rng.fill_normal(w, 0.0, wstd);
        w_ = ps.add(name + ".weight", std::move(w));
        b_ = ps.add(name + ".bias", Tensor<T>({out_ch}));
    }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, w_, b_, stride_, pad_, mode_); }

    const Var<T>& weight() const { return w_; }
    const Var<T>& bias() const { return b_; }

  private:
    Var<T> w_, b_;
    int stride_ = 1, pad_ = 0;
    PadMode mode_ = PadMode::kZero;
};

template <typename T>
class LinearLayer {
  public:
    LinearLayer() = default;

    LinearLayer(ParamSet<T>& ps, const std::string& name, Rng& rng, int in_dim, int out_dim,
                double wstd = 0.02) {
        Tensor<T> w({out_dim, in_dim});
        if (wstd > 0) rng.fill_normal(w, 0.0, wstd);
        w_ = ps.add(name + ".weight", std::move(w));
        b_ = ps.add(name + ".bias", Tensor<T>({out_dim}));
    }

    Var<T> operator()(const Var<T>& x) const { return linear(x, w_, b_); }

  private:
    Var<T> w_, b_;
};

// Largest group count <= 8 that divides the channel count.
inline int norm_groups_for(int channels) {
    int g = std::min(8, channels);
    while (channels % g != 0) --g;
    return g;
}

}  // namespace atme
