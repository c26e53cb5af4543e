#include "rsic/nn/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rsic::nn {

double truncated_normal(Rng& rng, double std_dev) {
    std::normal_distribution<double> dist(0.0, 1.0);
    double z = 0.0;
    do {
        z = dist(rng);
    } while (std::abs(z) > 2.0);
    return z * std_dev;
}

Parameter& ParameterStore::create(const std::string& name, Shape shape, Init init, Rng& rng, double std_dev) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Tensor value(shape);
    switch (init) {
        case Init::zeros:
            break;
        case Init::ones:
            value.fill(1.0);
            break;
        case Init::trunc_normal:
            for (double& v : value.values()) v = truncated_normal(rng, std_dev);
            break;
        case Init::he_normal: {
            // fan-in = product of all but the last dimension (conv and linear layouts)
            std::size_t fan_in = value.size() / (shape.empty() ? 1 : shape.back());
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1))));
            for (double& v : value.values()) v = dist(rng);
            break;
        }
        case Init::identity: {
            if (shape.size() != 2) throw std::invalid_argument("identity init needs a matrix: " + name);
            for (std::size_t i = 0; i < std::min(shape[0], shape[1]); ++i) value[i * shape[1] + i] = 1.0;
            break;
        }
    }
    Parameter p{std::move(value), Tensor(shape)};
    return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParameterStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
}

double ParameterStore::grad_norm() const {
    double sq = 0.0;
    for (const auto& [_, p] : params_)
        for (double g : p.grad.values()) sq += g * g;
    return std::sqrt(sq);
}

double ParameterStore::clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm > max_norm && norm > 0.0) {
        const double factor = max_norm / (norm + 1e-6);
        for (auto& [_, p] : params_)
            for (double& g : p.grad.values()) g *= factor;
    }
    return norm;
}

}  // namespace rsic::nn
