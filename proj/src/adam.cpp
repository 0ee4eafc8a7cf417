#include "tmr/adam.hpp"

#include <algorithm>
#include <cmath>

namespace tmr {

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (ad::Parameter* p : params_) {
        m_.emplace_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
        v_.emplace_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

double Adam::effective_lr(long t) const {
    if (cfg_.warmup_steps <= 0) return cfg_.lr;
    const double ramp = std::min(1.0, static_cast<double>(t) / static_cast<double>(cfg_.warmup_steps));
    return cfg_.lr * ramp;
}

void Adam::step() {
    ++t_;
    const double lr = effective_lr(t_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ad::Parameter& p = *params_[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
        p.value.array() -=
            lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
}

}  // namespace tmr
