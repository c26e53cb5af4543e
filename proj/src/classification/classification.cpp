#include "rsic/classification/classification.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "rsic/errors.hpp"
#include "rsic/nn/ops.hpp"
#include "rsic/nn/optim.hpp"

namespace rsic::classification {

namespace ops = nn::ops;

std::size_t classes_for_dataset(const std::string& dataset) {
    std::string d;
    for (char c : dataset) d.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (d == "SYDNEY") return 7;
    if (d == "UCM") return 21;
    if (d == "RSICD") return 31;
    throw ConfigError("no class count known for dataset \"" + dataset + "\" (SYDNEY, UCM, RSICD)");
}

void ClassHeadConfig::validate() const {
    if (num_classes < 2) throw ConfigError("classification head needs at least 2 classes");
    if (patch_count == 0 || feature_width == 0) throw ConfigError("classification head needs patch_count and feature_width > 0");
}

ClassificationHead::ClassificationHead(const ClassHeadConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    nn::Rng rng(seed);
    pool_ = &params_.create("probe.pool", {cfg_.patch_count}, nn::Init::zeros, rng);
    fc_ = model::Linear::create(params_, "probe.fc", cfg_.feature_width, cfg_.num_classes, rng);
}

Var ClassificationHead::pool_weights(Graph& g) const { return ops::softmax(g.parameter(*pool_)); }

Var ClassificationHead::pooled(Graph& g, Var enc) const {
    if (enc.value().rank() != 3 || enc.dim(1) != cfg_.patch_count || enc.dim(2) != cfg_.feature_width) {
        throw nn::ShapeError("classification head expects (B, " + std::to_string(cfg_.patch_count) + ", " +
                             std::to_string(cfg_.feature_width) + "), got " + nn::shape_string(enc.shape()));
    }
    return ops::weighted_patch_sum(enc, pool_weights(g));
}

Var ClassificationHead::logits(Graph& g, Var enc) const { return fc_(g, pooled(g, enc)); }

Var pooled_logits(const ClassificationHead& head, Graph& g, Var enc) { return head.logits(g, enc); }

namespace {

Var class_loss(Var logits, std::span<const std::int32_t> labels) {
    // cross_entropy works on (B, T, V); one position per image.
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    const std::vector<std::uint8_t> mask(b, 1);
    return ops::cross_entropy(ops::reshape(logits, {b, 1, c}), labels, mask);
}

}  // namespace

double train_probe(model::CaptionModel& model, ClassificationHead& head, const nn::Tensor& images,
                   const std::vector<std::int32_t>& labels, const ProbeOptions& opts) {
    const std::size_t n = images.dim(0);
    if (labels.size() != n) throw std::invalid_argument("probe needs one label per image");
    for (std::int32_t l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= head.config().num_classes)
            throw std::invalid_argument("probe label " + std::to_string(l) + " out of range");
    const bool frozen = head.config().freeze_encoder;
    const std::size_t steps_per_epoch = (n + opts.batch - 1) / opts.batch;
    nn::LinearWarmupSchedule schedule(opts.learn_rate, opts.epochs * steps_per_epoch, opts.warmup_frac);
    nn::AdamW head_opt, enc_opt;
    std::mt19937_64 rng(opts.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    // Frozen encoders never change, so their features are computed once.
    nn::Tensor features;
    if (frozen) features = model.encode_images(images);

    std::size_t step = 0;
    double last_epoch_loss = 0;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0;
        for (std::size_t start = 0; start < n; start += opts.batch) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(opts.batch, n - start));
            std::vector<std::int32_t> y;
            for (std::size_t i : idx) y.push_back(labels[i]);
            Graph g;
            Var enc = frozen ? g.constant(nn::take_rows(features, idx))
                             : model.encoder().forward(g, g.constant(nn::take_rows(images, idx))).data;
            Var loss = class_loss(head.logits(g, enc), y);
            const double value = loss.value()[0];
            if (!std::isfinite(value)) throw NumericError("probe loss is not finite");
            head.params().zero_grad();
            if (!frozen) model.params().zero_grad();
            g.backward(loss);
            const double lr = schedule.lr(step);
            head.params().clip_grad_norm(opts.clip_norm);
            head_opt.step(head.params(), lr);
            if (!frozen) {
                model.params().clip_grad_norm(opts.clip_norm);
                enc_opt.step(model.params(), lr);
            }
            ++step;
            sum += value * static_cast<double>(idx.size());
        }
        last_epoch_loss = sum / static_cast<double>(n);
        spdlog::debug("probe epoch {} loss {:.6f}", epoch + 1, last_epoch_loss);
    }
    return last_epoch_loss;
}

std::vector<std::int32_t> predict(const model::CaptionModel& model, const ClassificationHead& head,
                                  const nn::Tensor& images, std::size_t batch) {
    std::vector<std::int32_t> out;
    const std::size_t n = images.dim(0);
    for (std::size_t start = 0; start < n; start += batch) {
        std::vector<std::size_t> idx(std::min(batch, n - start));
        std::iota(idx.begin(), idx.end(), start);
        Graph g(Graph::Mode::inference);
        const nn::Tensor logits = head.logits(g, g.constant(model.encode_images(nn::take_rows(images, idx)))).value();
        const std::size_t c = logits.dim(1);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const double* row = logits.data() + b * c;
            out.push_back(static_cast<std::int32_t>(std::max_element(row, row + c) - row));
        }
    }
    return out;
}

double accuracy(const std::vector<std::int32_t>& predicted, const std::vector<std::int32_t>& truth) {
    if (predicted.size() != truth.size() || truth.empty()) throw std::invalid_argument("accuracy needs equal, non-empty label lists");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
    return 100.0 * static_cast<double>(hit) / static_cast<double>(truth.size());
}

ClassificationReport aggregate_report(const std::map<std::string, double>& per_dataset,
                                      const std::map<std::string, std::size_t>& test_sizes) {
    if (per_dataset.empty()) throw std::invalid_argument("classification report needs at least one dataset");
    if (per_dataset.size() != test_sizes.size()) throw std::invalid_argument("accuracy and test-size keys differ");
    ClassificationReport r{per_dataset, test_sizes, 0, 0};
    double weighted = 0, total = 0;
    for (const auto& [d, acc] : per_dataset) {
        const auto it = test_sizes.find(d);
        if (it == test_sizes.end()) throw std::invalid_argument("no test size for dataset \"" + d + "\"");
        r.macro += acc;
        weighted += acc * static_cast<double>(it->second);
        total += static_cast<double>(it->second);
    }
    if (total == 0) throw std::invalid_argument("test sizes sum to zero");
    r.macro /= static_cast<double>(per_dataset.size());
    r.micro = weighted / total;
    return r;
}

nlohmann::json to_json(const ClassificationReport& r) {
    return {{"per_dataset_accuracy", r.per_dataset_accuracy}, {"test_sizes", r.test_sizes}, {"macro", r.macro}, {"micro", r.micro}};
}

}  // namespace rsic::classification
