#include "rsic/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace rsic::nn {

void AdamW::step(ParameterStore& params, double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params.items()) {
        if (p.grad.size() != p.value.size()) continue;
        auto [it, inserted] = moments_.try_emplace(name);
        Moments& mom = it->second;
        if (inserted) {
            mom.m = Tensor(p.value.shape());
            mom.v = Tensor(p.value.shape());
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            mom.m[i] = options_.beta1 * mom.m[i] + (1.0 - options_.beta1) * g;
            mom.v[i] = options_.beta2 * mom.v[i] + (1.0 - options_.beta2) * g * g;
            const double m_hat = mom.m[i] / bc1;
            const double v_hat = mom.v[i] / bc2;
            p.value[i] -= lr * options_.weight_decay * p.value[i];
            p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + options_.eps);
        }
    }
}

LinearWarmupSchedule::LinearWarmupSchedule(double peak, std::size_t total_steps, double warmup_frac)
    : peak_(peak), total_(total_steps) {
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) throw std::invalid_argument("warmup fraction must lie in (0, 1)");
    if (total_steps == 0) throw std::invalid_argument("schedule needs at least one step");
    warmup_ = static_cast<std::size_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
}

double LinearWarmupSchedule::lr(std::size_t step) const {
    if (step >= total_) return 0.0;
    if (step < warmup_) return peak_ * static_cast<double>(step) / static_cast<double>(warmup_);
    return peak_ * static_cast<double>(total_ - step) / static_cast<double>(total_ - warmup_);
}

}  // namespace rsic::nn
