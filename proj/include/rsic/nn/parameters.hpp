#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "rsic/nn/graph.hpp"

namespace rsic::nn {

using Rng = std::mt19937_64;

enum class Init { zeros, ones, trunc_normal, he_normal, identity };

// Named, ordered collection of parameters. std::map keeps element addresses
// stable, so layers hold raw pointers into it.
class ParameterStore {
  public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) = default;
    ParameterStore& operator=(ParameterStore&&) = default;

    // Creates `name`; throws if it already exists. `std_dev` applies to normal inits.
    Parameter& create(const std::string& name, Shape shape, Init init, Rng& rng, double std_dev = 0.02);

    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    std::map<std::string, Parameter>& items() { return params_; }
    const std::map<std::string, Parameter>& items() const { return params_; }
    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();
    double grad_norm() const;
    // Scales all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
    double clip_grad_norm(double max_norm);

  private:
    std::map<std::string, Parameter> params_;
};

// Normal(0, std) resampled outside +/- 2 std.
double truncated_normal(Rng& rng, double std_dev);

}  // namespace rsic::nn
