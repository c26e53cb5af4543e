#pragma once

#include <cstdint>
#include <memory>

#include "rsic/corpus/tokenizer.hpp"
#include "rsic/model/decoder.hpp"
#include "rsic/model/encoder.hpp"

namespace rsic::model {

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;  // encoder_width is overwritten with encoder.feature_width
    std::uint64_t seed = 0;
};

// Encoder and decoder sharing one parameter store ("encoder." / "decoder." names).
class CaptionModel {
  public:
    explicit CaptionModel(const ModelConfig& cfg);
    CaptionModel(const CaptionModel&) = delete;
    CaptionModel& operator=(const CaptionModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }
    const HybridEncoder& encoder() const { return *encoder_; }
    const Decoder& decoder() const { return *decoder_; }

    // Encoder output for an image batch (B, H, W, 3), computed without a gradient tape.
    nn::Tensor encode_images(const nn::Tensor& images) const;

    // Teacher-forced mean cross entropy over a padded token batch aligned with `images`.
    Var loss(Graph& g, const nn::Tensor& images, const corpus::TokenBatch& batch) const;
    // Same, starting from precomputed encoder features.
    Var loss_from_features(Graph& g, Var enc, const corpus::TokenBatch& batch) const;

  private:
    ModelConfig cfg_;
    nn::ParameterStore params_;
    std::unique_ptr<HybridEncoder> encoder_;
    std::unique_ptr<Decoder> decoder_;
};

}  // namespace rsic::model
