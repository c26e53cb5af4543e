#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rsic/model/backbone.hpp"
#include "rsic/model/layers.hpp"

namespace rsic::model {

enum class Ablation { WOT, SHT, MHT };

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& text);  // ConfigError on anything else

struct EncoderConfig {
    BackboneSpec backbone;
    std::size_t patch_count = 49;
    std::size_t feature_width = 768;
    std::size_t layers = 6;
    std::size_t heads = 16;
    Ablation ablation = Ablation::MHT;

    // Heads actually instantiated: 1 under SHT, 0 (no stack) under WOT.
    std::size_t effective_heads() const;
    std::size_t effective_layers() const;
    // Throws ConfigError when the invariants do not hold.
    void validate() const;
};

enum class Provenance { raw_backbone, projected, embedded, encoded };

// (batch, patch, feature) activations plus the stage that produced them.
struct FeatureGrid {
    Var data;
    Provenance provenance = Provenance::raw_backbone;

    std::size_t batch() const { return data.dim(0); }
    std::size_t patches() const { return data.dim(1); }
    std::size_t width() const { return data.dim(2); }
};

// Per-layer self-attention weights (B, heads, P, P), filled when passed to encode().
struct AttentionTrace {
    std::vector<nn::Tensor> layers;
};

// Backbone -> adaptive pool to sqrt(P) x sqrt(P) -> 1x1 projection -> learned patch
// embeddings -> pre-norm transformer stack. No CLS slot is added.
class HybridEncoder {
  public:
    HybridEncoder(const EncoderConfig& cfg, nn::ParameterStore& store, nn::Rng& rng,
                  const std::string& prefix = "encoder.");

    const EncoderConfig& config() const { return cfg_; }
    const Backbone& backbone() const { return *backbone_; }
    std::size_t backbone_channels() const { return backbone_->out_channels(); }

    FeatureGrid extract_features(Graph& g, Var images) const;
    FeatureGrid project_features(Graph& g, const FeatureGrid& raw) const;
    FeatureGrid add_patch_embeddings(Graph& g, const FeatureGrid& projected) const;
    // WOT returns `x` itself. Otherwise runs the stack; throws NumericError naming
    // the first layer with non-finite output.
    FeatureGrid encode(Graph& g, const FeatureGrid& x, AttentionTrace* trace = nullptr) const;

    // Full pipeline from images (B, H, W, 3).
    FeatureGrid forward(Graph& g, Var images, AttentionTrace* trace = nullptr) const;

    // Learned (P, D) table; null under WOT.
    const nn::Parameter* patch_embeddings() const { return pos_; }

  private:
    struct Block {
        LayerNorm ln1;
        MultiHeadAttention attn;
        LayerNorm ln2;
        FeedForward mlp;
    };

    EncoderConfig cfg_;
    std::unique_ptr<Backbone> backbone_;
    Linear proj_;
    nn::Parameter* pos_ = nullptr;
    std::vector<Block> blocks_;
    LayerNorm final_ln_;
};

}  // namespace rsic::model
