#include "cloudfuse/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cloudfuse {

AdamOptimizer::AdamOptimizer(std::vector<NamedParam> params, OptimConfig config)
    : params_(std::move(params)), cfg_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
        if (!p.tensor->requires_grad)
            throw std::invalid_argument("optimizer parameter '" + p.name +
                                        "' does not require grad");
        m_.emplace_back(p.tensor->numel(), 0.0f);
        v_.emplace_back(p.tensor->numel(), 0.0f);
        if (cfg_.lookahead) slow_.push_back(p.tensor->data);
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
}

void AdamOptimizer::step() {
    for (auto& p : params_)
        for (float g : p.tensor->grad)
            if (!std::isfinite(g))
                throw std::runtime_error("non-finite gradient in parameter '" +
                                         p.name + "'");

    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double b1t = std::pow(b1, static_cast<double>(t_));
    const double b2t = std::pow(b2, static_cast<double>(t_));

    // RAdam rectification term (length of the approximated SMA)
    double rect = 1.0;
    bool variance_tractable = true;
    if (cfg_.rectify) {
        const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
        const double rho_t = rho_inf - 2.0 * t_ * b2t / (1.0 - b2t);
        if (rho_t > 4.0) {
            rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                             ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        } else {
            variance_tractable = false;
        }
    }

    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& t = *params_[pi].tensor;
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const float g = t.grad[i];
            m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
            v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g * g);
            const double mhat = m[i] / (1.0 - b1t);
            if (cfg_.rectify && !variance_tractable) {
                // variance not yet tractable: unrectified momentum step
                t.data[i] -= static_cast<float>(cfg_.lr * mhat);
            } else {
                const double vhat = v[i] / (1.0 - b2t);
                t.data[i] -= static_cast<float>(cfg_.lr * rect * mhat /
                                                (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    if (cfg_.lookahead && t_ % cfg_.lookahead_k == 0) {
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& fast = params_[pi].tensor->data;
            auto& slow = slow_[pi];
            for (std::size_t i = 0; i < fast.size(); ++i) {
                slow[i] += cfg_.lookahead_alpha * (fast[i] - slow[i]);
                fast[i] = slow[i];
            }
        }
    }
}

} // namespace cloudfuse
