#pragma once

#include <string>

#include "rsic/nn/graph.hpp"
#include "rsic/nn/parameters.hpp"

// Parameter-holding building blocks. Each holds raw pointers into a ParameterStore.
namespace rsic::model {

using nn::Graph;
using nn::Var;

struct Linear {
    nn::Parameter* w = nullptr;  // (in, out)
    nn::Parameter* b = nullptr;  // (out) or null

    static Linear create(nn::ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                         nn::Rng& rng, bool bias = true, nn::Init init = nn::Init::trunc_normal);
    Var operator()(Graph& g, Var x) const;
};

struct LayerNorm {
    nn::Parameter* gamma = nullptr;
    nn::Parameter* beta = nullptr;

    static LayerNorm create(nn::ParameterStore& store, const std::string& name, std::size_t dim, nn::Rng& rng);
    Var operator()(Graph& g, Var x) const;
};

struct Conv2d {
    nn::Parameter* w = nullptr;  // (k, k, cin / groups, cout)
    nn::Parameter* b = nullptr;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;

    static Conv2d create(nn::ParameterStore& store, const std::string& name, std::size_t kernel, std::size_t cin,
                         std::size_t cout, std::size_t stride, std::size_t padding, nn::Rng& rng,
                         std::size_t groups = 1);
    Var operator()(Graph& g, Var x) const;
};

// Query from `xq`, keys and values from `xkv` (whose width may differ from the model width).
struct MultiHeadAttention {
    Linear q, k, v, o;
    std::size_t heads = 1;

    static MultiHeadAttention create(nn::ParameterStore& store, const std::string& name, std::size_t width,
                                     std::size_t kv_width, std::size_t heads, nn::Rng& rng);
    Var operator()(Graph& g, Var xq, Var xkv, bool causal, nn::Tensor* probs = nullptr) const;
};

struct FeedForward {
    Linear fc1, fc2;

    static FeedForward create(nn::ParameterStore& store, const std::string& name, std::size_t width,
                              std::size_t hidden, nn::Rng& rng);
    Var operator()(Graph& g, Var x) const;
};

}  // namespace rsic::model
