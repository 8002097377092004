#pragma once

#include <cmath>

#include "atme/ops.hpp"

namespace atme {

enum class AdversarialMode { kNonsaturating, kMinimax };

struct LossConfig {
    double lambda_l1 = 100.0;
    AdversarialMode adversarial_mode = AdversarialMode::kNonsaturating;
    double eps = 1e-7;

    void validate() const {
        if (lambda_l1 < 0) throw ConfigError("loss: lambda_l1 must be >= 0");
        if (eps <= 0 || eps >= 0.5) throw ConfigError("loss: eps must lie in (0, 0.5)");
    }
};

template <typename T>
struct LossBreakdown {
    T gan_value = 0;
    T l1_value = 0;
    T d_loss = 0;
    T g_loss = 0;
};

inline double theoretical_optimum() { return -std::log(4.0); }

// Probability-space patch objective: (1/N) sum_i [log D_i(real) +
// log(1 - D_i(fake))]. Values at 0/1 are clamped; `clamped` reports whether
// that happened.
template <typename T>
double gan_objective(const Tensor<T>& d_real_probs, const Tensor<T>& d_fake_probs,
                     double eps = 1e-7, bool* clamped = nullptr) {
    check(d_real_probs.size() == d_fake_probs.size() && d_real_probs.size() > 0,
          "gan_objective: patch counts differ or empty");
    bool hit = false;
    double acc = 0;
    const int64_t n = d_real_probs.size();
    for (int64_t i = 0; i < n; ++i) {
        double pr = static_cast<double>(d_real_probs[i]);
        double pf = static_cast<double>(d_fake_probs[i]);
        if (pr < eps || pr > 1 - eps || pf < eps || pf > 1 - eps) hit = true;
        pr = std::clamp(pr, eps, 1 - eps);
        pf = std::clamp(pf, eps, 1 - eps);
        acc += std::log(pr) + std::log(1 - pf);
    }
    if (clamped) *clamped = hit;
    return acc / double(n);
}

template <typename T>
double discriminator_loss_probs(const Tensor<T>& d_real_probs, const Tensor<T>& d_fake_probs,
                                double eps = 1e-7) {
    return -gan_objective(d_real_probs, d_fake_probs, eps);
}

// (1/N) sum_i of the binary entropy of each patch probability.
template <typename T>
double mean_patch_entropy(const Tensor<T>& d_probs, double eps = 1e-7) {
    check(d_probs.size() > 0, "mean_patch_entropy: empty map");
    double acc = 0;
    for (int64_t i = 0; i < d_probs.size(); ++i) {
        const double p = std::clamp(static_cast<double>(d_probs[i]), eps, 1 - eps);
        acc += -p * std::log(p) - (1 - p) * std::log(1 - p);
    }
    return acc / double(d_probs.size());
}

// Logit-space training losses (numerically stable; gradients flow).

// -gan_objective as a differentiable function of raw logit maps.
template <typename T>
Var<T> discriminator_loss(const Var<T>& real_logits, const Var<T>& fake_logits) {
    return add(bce_logits_mean(real_logits, T(1)), bce_logits_mean(fake_logits, T(0)));
}

template <typename T>
Var<T> generator_adversarial_loss(const Var<T>& fake_logits, AdversarialMode mode) {
    if (mode == AdversarialMode::kNonsaturating) return bce_logits_mean(fake_logits, T(1));
    return log1m_sigmoid_mean(fake_logits);
}

template <typename T>
Var<T> generator_loss(const Var<T>& fake_logits, const Var<T>& y_hat, const Var<T>& y,
                      const LossConfig& cfg, LossBreakdown<T>* breakdown = nullptr) {
    cfg.validate();
    auto adv = generator_adversarial_loss(fake_logits, cfg.adversarial_mode);
    auto l1 = l1_mean(y_hat, y);
    auto total = add(adv, mul_scalar(l1, static_cast<T>(cfg.lambda_l1)));
    if (breakdown) {
        breakdown->l1_value = l1.val()[0];
        breakdown->g_loss = total.val()[0];
    }
    return total;
}

// The GAN objective straight from logit maps (for monitoring): mean log sigmoid(z_r)
// + mean log(1 - sigmoid(z_f)) computed in double via softplus.
template <typename T>
double gan_objective_from_logits(const Tensor<T>& real_logits, const Tensor<T>& fake_logits) {
    check(real_logits.size() == fake_logits.size() && real_logits.size() > 0,
          "gan_objective_from_logits: patch counts differ or empty");
    double acc = 0;
    const int64_t n = real_logits.size();
    for (int64_t i = 0; i < n; ++i) {
        const double zr = static_cast<double>(real_logits[i]);
        const double zf = static_cast<double>(fake_logits[i]);
        acc -= scalar_fn::softplus(-zr);
        acc -= scalar_fn::softplus(zf);
    }
    return acc / double(n);
}

}  // namespace atme
