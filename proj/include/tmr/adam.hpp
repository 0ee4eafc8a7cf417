#pragma once

#include <vector>

#include "tmr/autodiff.hpp"

namespace tmr {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-6;
    long warmup_steps = 100;
};

/// Adam with bias correction and linear learning-rate warmup.
class Adam {
  public:
    Adam(std::vector<ad::Parameter*> params, AdamConfig cfg);

    /// Apply one update from the parameters' accumulated gradients.
    void step();

    long steps_taken() const { return t_; }

    /// base_lr * min(1, t / warmup_steps), with warmup 0 meaning no ramp.
    double effective_lr(long t) const;

  private:
    std::vector<ad::Parameter*> params_;
    AdamConfig cfg_;
    std::vector<ad::Mat> m_;
    std::vector<ad::Mat> v_;
    long t_ = 0;
};

}  // namespace tmr
