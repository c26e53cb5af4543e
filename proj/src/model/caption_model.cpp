#include "rsic/model/caption_model.hpp"

#include "rsic/nn/ops.hpp"

namespace rsic::model {

CaptionModel::CaptionModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.decoder.encoder_width = cfg_.encoder.feature_width;
    nn::Rng rng(cfg_.seed);
    encoder_ = std::make_unique<HybridEncoder>(cfg_.encoder, params_, rng);
    decoder_ = std::make_unique<Decoder>(cfg_.decoder, params_, rng);
}

nn::Tensor CaptionModel::encode_images(const nn::Tensor& images) const {
    Graph g(Graph::Mode::inference);
    return encoder_->forward(g, g.constant(images)).data.value();
}

Var CaptionModel::loss(Graph& g, const nn::Tensor& images, const corpus::TokenBatch& batch) const {
    return loss_from_features(g, encoder_->forward(g, g.constant(images)).data, batch);
}

Var CaptionModel::loss_from_features(Graph& g, Var enc, const corpus::TokenBatch& batch) const {
    if (batch.cols < 2) throw std::invalid_argument("token batch needs at least two columns");
    const std::size_t len = batch.cols - 1;
    std::vector<TokenId> input, target;
    std::vector<std::uint8_t> mask;
    input.reserve(batch.rows * len);
    for (std::size_t r = 0; r < batch.rows; ++r) {
        for (std::size_t c = 0; c < len; ++c) {
            input.push_back(batch.id(r, c));
            target.push_back(batch.id(r, c + 1));
            mask.push_back(batch.mask[r * batch.cols + c + 1]);
        }
    }
    Var logits = decoder_->forward(g, input, batch.rows, len, enc);
    return compute_loss(logits, target, mask);
}

}  // namespace rsic::model
