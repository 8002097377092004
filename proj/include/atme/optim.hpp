#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "atme/nn.hpp"

namespace atme {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (lr < 0) throw ConfigError("adam: lr must be >= 0");
        if (beta1 < 0 || beta1 >= 1) throw ConfigError("adam: beta1 must be in [0,1)");
        if (beta2 < 0 || beta2 >= 1) throw ConfigError("adam: beta2 must be in [0,1)");
        if (eps <= 0) throw ConfigError("adam: eps must be > 0");
    }
};

// Constant for the first epochs_const epochs, then linear decay to zero over
// epochs_decay. Epochs are 1-based; the boundary epoch still gets lr0, so the
// schedule is continuous and non-increasing.
inline double lr_at_epoch(int epoch, int epochs_const, int epochs_decay, double lr0) {
    check(epochs_const >= 1 && epochs_decay >= 1 && lr0 > 0,
          "lr_at_epoch: invalid schedule parameters");
    const int total = epochs_const + epochs_decay;
    if (epoch < 1 || epoch > total)
        throw ConfigError("lr_at_epoch: epoch " + std::to_string(epoch) +
                          " outside schedule range [1," + std::to_string(total) + "]");
    if (epoch <= epochs_const) return lr0;
    return lr0 * double(total - epoch) / double(epochs_decay);
}

// Adam over an explicit list of named parameters (possibly drawn from several
// ParamSets, e.g. generator + W transform under one optimizer). Parameters
// whose gradient is absent this step are skipped and keep their own step
// count, so bias correction stays exact per parameter.
template <typename T>
class Adam {
  public:
    Adam() = default;

    Adam(std::vector<std::pair<std::string, Var<T>>> params, AdamConfig cfg)
        : cfg_(cfg), params_(std::move(params)) {
        cfg_.validate();
        state_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            state_[i].m = Tensor<double>(params_[i].second.shape());
            state_[i].v = Tensor<double>(params_[i].second.shape());
        }
    }

    static std::vector<std::pair<std::string, Var<T>>> collect(
        std::initializer_list<std::pair<std::string, const ParamSet<T>*>> sets) {
        std::vector<std::pair<std::string, Var<T>>> out;
        for (const auto& [prefix, ps] : sets)
            for (const auto& [name, v] : ps->items()) out.emplace_back(prefix + name, v);
        return out;
    }

    void set_lr(double lr) {
        check(lr >= 0, "adam: lr must be >= 0");
        cfg_.lr = lr;
    }
    double lr() const { return cfg_.lr; }

    void zero_grad() {
        for (auto& [name, v] : params_) v.zero_grad();
    }

    void step() {
        for (size_t i = 0; i < params_.size(); ++i) {
            Var<T>& p = params_[i].second;
            if (!p.has_grad()) continue;
            ParamState& st = state_[i];
            st.steps += 1;
            const double bc1 = 1.0 - std::pow(cfg_.beta1, double(st.steps));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, double(st.steps));
            const Tensor<T>& g = p.grad();
            Tensor<T>& w = p.val();
            for (int64_t j = 0; j < w.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                st.m[j] = cfg_.beta1 * st.m[j] + (1.0 - cfg_.beta1) * gj;
                st.v[j] = cfg_.beta2 * st.v[j] + (1.0 - cfg_.beta2) * gj * gj;
                const double mhat = st.m[j] / bc1;
                const double vhat = st.v[j] / bc2;
                w[j] = static_cast<T>(static_cast<double>(w[j]) -
                                      cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    const AdamConfig& config() const { return cfg_; }
    size_t param_count() const { return params_.size(); }
    const std::string& param_name(size_t i) const { return params_[i].first; }

    // Checkpoint access: first/second moments and per-parameter step counts.
    struct ParamState {
        Tensor<double> m, v;
        int64_t steps = 0;
    };
    const ParamState& state(size_t i) const { return state_[i]; }
    void restore_state(size_t i, Tensor<double> m, Tensor<double> v, int64_t steps) {
        check(m.shape() == params_[i].second.shape() && v.shape() == params_[i].second.shape(),
              "adam: restored moment shape mismatch for " + params_[i].first);
        state_[i].m = std::move(m);
        state_[i].v = std::move(v);
        state_[i].steps = steps;
    }

  private:
    AdamConfig cfg_;
    std::vector<std::pair<std::string, Var<T>>> params_;
    std::vector<ParamState> state_;
};

}  // namespace atme
