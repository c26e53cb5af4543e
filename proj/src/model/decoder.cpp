#include "rsic/model/decoder.hpp"

#include <algorithm>
#include <stdexcept>

#include "rsic/errors.hpp"
#include "rsic/nn/ops.hpp"

namespace rsic::model {

namespace ops = nn::ops;

void DecoderConfig::validate() const {
    if (layers == 0 || heads == 0 || width == 0) throw ConfigError("decoder layers, heads and width must be positive");
    if (width % heads != 0) {
        throw ConfigError("decoder width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (vocab_size == 0 || max_len == 0) throw ConfigError("decoder vocab_size and max_len must be set");
    if (encoder_width == 0) throw ConfigError("decoder encoder_width must be positive");
}

TeacherPair make_teacher_pair(const corpus::TokenSequence& seq, TokenId start_id, TokenId end_id) {
    if (seq.ids.size() < 2 || seq.ids.front() != start_id) {
        throw std::invalid_argument("teacher pair needs a sequence beginning with the start token");
    }
    if (std::find(seq.ids.begin(), seq.ids.end(), end_id) == seq.ids.end()) {
        throw std::invalid_argument("teacher pair needs a sequence containing the end token");
    }
    if (seq.mask.size() != seq.ids.size()) throw std::invalid_argument("sequence ids and mask differ in length");
    TeacherPair p;
    p.input.assign(seq.ids.begin(), seq.ids.end() - 1);
    p.target.assign(seq.ids.begin() + 1, seq.ids.end());
    p.mask.assign(seq.mask.begin() + 1, seq.mask.end());
    return p;
}

Decoder::Decoder(const DecoderConfig& cfg, nn::ParameterStore& store, nn::Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.width;
    wte_ = &store.create(prefix + "wte", {cfg_.vocab_size, d}, nn::Init::trunc_normal, rng);
    wpe_ = &store.create(prefix + "wpe", {cfg_.max_len, d}, nn::Init::trunc_normal, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string n = prefix + "layer" + std::to_string(l);
        blocks_.push_back({LayerNorm::create(store, n + ".ln1", d, rng),
                           MultiHeadAttention::create(store, n + ".self_attn", d, d, cfg_.heads, rng),
                           LayerNorm::create(store, n + ".ln2", d, rng),
                           MultiHeadAttention::create(store, n + ".cross_attn", d, cfg_.encoder_width, cfg_.heads, rng),
                           LayerNorm::create(store, n + ".ln3", d, rng),
                           FeedForward::create(store, n + ".mlp", d, 4 * d, rng)});
    }
    final_ln_ = LayerNorm::create(store, prefix + "ln_f", d, rng);
}

Var Decoder::forward(Graph& g, std::span<const TokenId> ids, std::size_t batch, std::size_t len, Var enc,
                     const DecoderOptions& options) const {
    if (len == 0 || ids.size() != batch * len) {
        throw nn::ShapeError("decoder input holds " + std::to_string(ids.size()) + " ids for batch " +
                             std::to_string(batch) + " x len " + std::to_string(len));
    }
    if (len > cfg_.max_len) {
        throw std::out_of_range("decoder position " + std::to_string(len - 1) + " exceeds max_len " +
                                std::to_string(cfg_.max_len));
    }
    for (TokenId id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
            throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                                    std::to_string(cfg_.vocab_size));
        }
    }
    if (enc.shape().size() != 3 || enc.dim(0) != batch || enc.dim(2) != cfg_.encoder_width) {
        throw nn::ShapeError("decoder expects encoder features (" + std::to_string(batch) + ", P, " +
                             std::to_string(cfg_.encoder_width) + "), got " + nn::shape_string(enc.shape()));
    }
    Var wte = g.parameter(*wte_);
    std::vector<TokenId> positions(len);
    for (std::size_t t = 0; t < len; ++t) positions[t] = static_cast<TokenId>(t);
    Var h = ops::add_broadcast(ops::embedding(wte, ids, {batch, len}),
                               ops::embedding(g.parameter(*wpe_), positions, {len}));
    for (const Block& b : blocks_) {
        nn::Tensor self_p, cross_p;
        Var n1 = b.ln1(g, h);
        h = ops::add(h, b.self_attn(g, n1, n1, true, options.self_probs ? &self_p : nullptr));
        if (options.cross_attention) {
            h = ops::add(h, b.cross_attn(g, b.ln2(g, h), enc, false, options.cross_probs ? &cross_p : nullptr));
        }
        h = ops::add(h, b.mlp(g, b.ln3(g, h)));
        if (options.self_probs) options.self_probs->push_back(std::move(self_p));
        if (options.cross_probs) options.cross_probs->push_back(std::move(cross_p));
    }
    return ops::matmul_transposed(final_ln_(g, h), wte);
}

Var compute_loss(Var logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask) {
    return ops::cross_entropy(logits, targets, mask);
}

}  // namespace rsic::model
