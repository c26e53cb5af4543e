#pragma once

#include <span>
#include <vector>

#include "rsic/corpus/tokenizer.hpp"
#include "rsic/model/layers.hpp"

namespace rsic::model {

using corpus::TokenId;

struct DecoderConfig {
    std::size_t layers = 12;
    std::size_t heads = 12;
    std::size_t width = 768;
    std::size_t vocab_size = 0;
    std::size_t max_len = 0;
    // Width of the encoder features fed to cross-attention.
    std::size_t encoder_width = 768;

    void validate() const;  // ConfigError
};

struct TeacherPair {
    std::vector<TokenId> input;
    std::vector<TokenId> target;
    std::vector<std::uint8_t> mask;  // loss mask over target positions
};

// input = ids without the last slot, target = ids without the start token; the
// mask is the sequence mask shifted the same way, so pads never reach the loss.
// Throws std::invalid_argument unless seq starts with start_id and holds end_id.
TeacherPair make_teacher_pair(const corpus::TokenSequence& seq, TokenId start_id, TokenId end_id);

struct DecoderOptions {
    // false zeroes the cross-attention path, making logits image independent.
    bool cross_attention = true;
    // Per-layer (B, heads, T, P) cross-attention weights when non-null.
    std::vector<nn::Tensor>* cross_probs = nullptr;
    // Per-layer (B, heads, T, T) self-attention weights when non-null.
    std::vector<nn::Tensor>* self_probs = nullptr;
};

// Pre-norm blocks: causal self-attention, cross-attention onto the encoder grid,
// GELU MLP. Learned positions, output head tied to the token embedding.
class Decoder {
  public:
    Decoder(const DecoderConfig& cfg, nn::ParameterStore& store, nn::Rng& rng, const std::string& prefix = "decoder.");

    const DecoderConfig& config() const { return cfg_; }

    // ids row-major (batch, len); enc (batch, P, encoder_width). Returns (batch, len, vocab).
    // Throws std::out_of_range for len > max_len or ids outside the vocabulary.
    Var forward(Graph& g, std::span<const TokenId> ids, std::size_t batch, std::size_t len, Var enc,
                const DecoderOptions& options = {}) const;

  private:
    struct Block {
        LayerNorm ln1;
        MultiHeadAttention self_attn;
        LayerNorm ln2;
        MultiHeadAttention cross_attn;
        LayerNorm ln3;
        FeedForward mlp;
    };

    DecoderConfig cfg_;
    nn::Parameter* wte_ = nullptr;
    nn::Parameter* wpe_ = nullptr;
    std::vector<Block> blocks_;
    LayerNorm final_ln_;
};

// Masked mean cross entropy; std::invalid_argument when every position is masked.
Var compute_loss(Var logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask);

}  // namespace rsic::model
