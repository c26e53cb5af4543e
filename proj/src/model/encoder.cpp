#include "rsic/model/encoder.hpp"

#include <cmath>

#include "rsic/errors.hpp"
#include "rsic/nn/ops.hpp"

namespace rsic::model {

namespace ops = nn::ops;

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::WOT:
            return "WOT";
        case Ablation::SHT:
            return "SHT";
        case Ablation::MHT:
            return "MHT";
    }
    return "MHT";
}

Ablation parse_ablation(const std::string& text) {
    if (text == "WOT" || text == "wot") return Ablation::WOT;
    if (text == "SHT" || text == "sht") return Ablation::SHT;
    if (text == "MHT" || text == "mht") return Ablation::MHT;
    throw ConfigError("unknown ablation \"" + text + "\" (expected WOT, SHT or MHT)");
}

std::size_t EncoderConfig::effective_heads() const {
    switch (ablation) {
        case Ablation::WOT:
            return 0;
        case Ablation::SHT:
            return 1;
        case Ablation::MHT:
            break;
    }
    return heads;
}

std::size_t EncoderConfig::effective_layers() const { return ablation == Ablation::WOT ? 0 : layers; }

void EncoderConfig::validate() const {
    if (patch_count == 0 || feature_width == 0) throw ConfigError("encoder patch_count and feature_width must be positive");
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(patch_count))));
    if (side * side != patch_count) {
        throw ConfigError("encoder patch_count " + std::to_string(patch_count) + " is not a perfect square");
    }
    if (ablation != Ablation::WOT) {
        if (layers == 0) throw ConfigError("encoder layers must be positive");
        const std::size_t h = effective_heads();
        if (h == 0 || feature_width % h != 0) {
            throw ConfigError("encoder feature_width " + std::to_string(feature_width) + " is not divisible by " +
                              std::to_string(h) + " heads");
        }
    }
}

HybridEncoder::HybridEncoder(const EncoderConfig& cfg, nn::ParameterStore& store, nn::Rng& rng,
                             const std::string& prefix)
    : cfg_(cfg) {
    cfg_.validate();
    backbone_ = BackboneRegistry::global().instantiate(cfg_.backbone, store, prefix + "backbone.", rng);
    const std::size_t d = cfg_.feature_width;
    proj_ = Linear::create(store, prefix + "proj", backbone_->out_channels(), d, rng);
    if (cfg_.ablation == Ablation::WOT) return;
    pos_ = &store.create(prefix + "patch_embed", {cfg_.patch_count, d}, nn::Init::trunc_normal, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string n = prefix + "layer" + std::to_string(l);
        blocks_.push_back({LayerNorm::create(store, n + ".ln1", d, rng),
                           MultiHeadAttention::create(store, n + ".attn", d, d, cfg_.effective_heads(), rng),
                           LayerNorm::create(store, n + ".ln2", d, rng),
                           FeedForward::create(store, n + ".mlp", d, 4 * d, rng)});
    }
    final_ln_ = LayerNorm::create(store, prefix + "ln_f", d, rng);
}

FeatureGrid HybridEncoder::extract_features(Graph& g, Var images) const {
    if (images.shape().size() != 4 || images.dim(3) != 3) {
        throw nn::ShapeError("encoder expects images (B, H, W, 3), got " + nn::shape_string(images.shape()));
    }
    Var fmap = backbone_->forward(g, images);
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(cfg_.patch_count))));
    Var pooled = ops::adaptive_avg_pool2d(fmap, side, side);
    const std::size_t b = pooled.dim(0);
    return {ops::reshape(pooled, {b, cfg_.patch_count, pooled.dim(3)}), Provenance::raw_backbone};
}

FeatureGrid HybridEncoder::project_features(Graph& g, const FeatureGrid& raw) const {
    return {proj_(g, raw.data), Provenance::projected};
}

FeatureGrid HybridEncoder::add_patch_embeddings(Graph& g, const FeatureGrid& projected) const {
    if (!pos_) return projected;
    if (projected.patches() != cfg_.patch_count) {
        throw nn::ShapeError("patch embeddings expect " + std::to_string(cfg_.patch_count) + " patches, got " +
                             std::to_string(projected.patches()));
    }
    return {ops::add_broadcast(projected.data, g.parameter(*pos_)), Provenance::embedded};
}

FeatureGrid HybridEncoder::encode(Graph& g, const FeatureGrid& x, AttentionTrace* trace) const {
    if (cfg_.ablation == Ablation::WOT) return x;
    Var h = x.data;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const Block& b = blocks_[l];
        nn::Tensor probs;
        Var n1 = b.ln1(g, h);
        h = ops::add(h, b.attn(g, n1, n1, false, trace ? &probs : nullptr));
        h = ops::add(h, b.mlp(g, b.ln2(g, h)));
        if (!h.value().all_finite()) throw NumericError("encoder", l);
        if (trace) trace->layers.push_back(std::move(probs));
    }
    return {final_ln_(g, h), Provenance::encoded};
}

FeatureGrid HybridEncoder::forward(Graph& g, Var images, AttentionTrace* trace) const {
    FeatureGrid grid = project_features(g, extract_features(g, images));
    if (cfg_.ablation == Ablation::WOT) return grid;
    return encode(g, add_patch_embeddings(g, grid), trace);
}

}  // namespace rsic::model
