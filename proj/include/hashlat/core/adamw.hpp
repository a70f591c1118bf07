#pragma once

#include <cmath>
#include <vector>

namespace hashlat {

// Adaptive-moment descent with decoupled weight decay over a flat parameter
// vector.
class AdamW {
public:
    AdamW(size_t n, double lr, double weight_decay = 0.0, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps),
          m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            double mhat = m_[i] / bc1;
            double vhat = v_[i] / bc2;
            params[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * params[i]);
        }
    }

    double lr() const { return lr_; }

private:
    double lr_, wd_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace hashlat
