#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "rsic/nn/parameters.hpp"

namespace rsic::nn {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Adam with decoupled weight decay. Moment buffers are keyed by parameter name.
class AdamW {
  public:
    explicit AdamW(AdamWOptions options = {}) : options_(options) {}

    void step(ParameterStore& params, double lr);
    std::size_t steps() const { return step_; }

  private:
    struct Moments {
        Tensor m, v;
    };
    AdamWOptions options_;
    std::size_t step_ = 0;
    std::map<std::string, Moments> moments_;
};

// Linear warm-up from 0 to `peak` over the first `warmup_frac` of `total_steps`,
// then linear decay to 0 at `total_steps`.
class LinearWarmupSchedule {
  public:
    LinearWarmupSchedule(double peak, std::size_t total_steps, double warmup_frac);

    double lr(std::size_t step) const;
    std::size_t warmup_steps() const { return warmup_; }
    std::size_t total_steps() const { return total_; }

  private:
    double peak_;
    std::size_t total_;
    std::size_t warmup_;
};

}  // namespace rsic::nn
