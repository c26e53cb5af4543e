#include "rsic/model/layers.hpp"

#include "rsic/nn/ops.hpp"

namespace rsic::model {

namespace ops = nn::ops;

Linear Linear::create(nn::ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      nn::Rng& rng, bool bias, nn::Init init) {
    Linear l;
    l.w = &store.create(name + ".w", {in, out}, init, rng);
    if (bias) l.b = &store.create(name + ".b", {out}, nn::Init::zeros, rng);
    return l;
}

Var Linear::operator()(Graph& g, Var x) const {
    return ops::linear(x, g.parameter(*w), b ? g.parameter(*b) : Var{});
}

LayerNorm LayerNorm::create(nn::ParameterStore& store, const std::string& name, std::size_t dim, nn::Rng& rng) {
    return {&store.create(name + ".gamma", {dim}, nn::Init::ones, rng),
            &store.create(name + ".beta", {dim}, nn::Init::zeros, rng)};
}

Var LayerNorm::operator()(Graph& g, Var x) const {
    return ops::layer_norm(x, g.parameter(*gamma), g.parameter(*beta));
}

Conv2d Conv2d::create(nn::ParameterStore& store, const std::string& name, std::size_t kernel, std::size_t cin,
                      std::size_t cout, std::size_t stride, std::size_t padding, nn::Rng& rng, std::size_t groups) {
    Conv2d c;
    c.w = &store.create(name + ".w", {kernel, kernel, cin / groups, cout}, nn::Init::he_normal, rng);
    c.b = &store.create(name + ".b", {cout}, nn::Init::zeros, rng);
    c.stride = stride;
    c.padding = padding;
    c.groups = groups;
    return c;
}

Var Conv2d::operator()(Graph& g, Var x) const {
    return ops::conv2d(x, g.parameter(*w), g.parameter(*b), stride, padding, groups);
}

MultiHeadAttention MultiHeadAttention::create(nn::ParameterStore& store, const std::string& name, std::size_t width,
                                              std::size_t kv_width, std::size_t heads, nn::Rng& rng) {
    MultiHeadAttention a;
    a.q = Linear::create(store, name + ".q", width, width, rng);
    a.k = Linear::create(store, name + ".k", kv_width, width, rng);
    a.v = Linear::create(store, name + ".v", kv_width, width, rng);
    a.o = Linear::create(store, name + ".o", width, width, rng);
    a.heads = heads;
    return a;
}

Var MultiHeadAttention::operator()(Graph& g, Var xq, Var xkv, bool causal, nn::Tensor* probs) const {
    Var ctx = ops::attention(q(g, xq), k(g, xkv), v(g, xkv), heads, causal, probs);
    return o(g, ctx);
}

FeedForward FeedForward::create(nn::ParameterStore& store, const std::string& name, std::size_t width,
                                std::size_t hidden, nn::Rng& rng) {
    return {Linear::create(store, name + ".fc1", width, hidden, rng),
            Linear::create(store, name + ".fc2", hidden, width, rng)};
}

Var FeedForward::operator()(Graph& g, Var x) const { return fc2(g, ops::gelu(fc1(g, x))); }

}  // namespace rsic::model
