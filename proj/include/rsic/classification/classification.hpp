#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsic/model/caption_model.hpp"
#include "rsic/model/layers.hpp"

namespace rsic::classification {

using nn::Graph;
using nn::Var;

// SYDNEY 7, UCM 21, RSICD 31; ConfigError otherwise.
std::size_t classes_for_dataset(const std::string& dataset);

struct ClassHeadConfig {
    std::size_t num_classes = 0;
    std::size_t patch_count = 49;
    std::size_t feature_width = 768;
    bool freeze_encoder = false;

    void validate() const;
};

// Softmax-weighted patch average followed by an affine map to class logits.
// Pool weights start at zero, i.e. a plain patch mean.
class ClassificationHead {
  public:
    ClassificationHead(const ClassHeadConfig& cfg, std::uint64_t seed);

    const ClassHeadConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    Var pool_weights(Graph& g) const;            // (P), sums to 1
    Var pooled(Graph& g, Var enc) const;         // (B, D)
    Var logits(Graph& g, Var enc) const;         // (B, classes)
    nn::Parameter& raw_pool_weights() { return *pool_; }

  private:
    ClassHeadConfig cfg_;
    nn::ParameterStore params_;
    nn::Parameter* pool_ = nullptr;
    model::Linear fc_;
};

Var pooled_logits(const ClassificationHead& head, Graph& g, Var enc);

struct ProbeOptions {
    std::size_t epochs = 10;
    std::size_t batch = 64;
    double learn_rate = 1e-4;
    double warmup_frac = 0.1;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
};

// Images (N, H, W, 3) with class indices. Fine-tunes the encoder unless frozen.
// Returns the mean loss of the final epoch.
double train_probe(model::CaptionModel& model, ClassificationHead& head, const nn::Tensor& images,
                   const std::vector<std::int32_t>& labels, const ProbeOptions& opts);
std::vector<std::int32_t> predict(const model::CaptionModel& model, const ClassificationHead& head,
                                  const nn::Tensor& images, std::size_t batch = 64);
// Percent correct.
double accuracy(const std::vector<std::int32_t>& predicted, const std::vector<std::int32_t>& truth);

struct ClassificationReport {
    std::map<std::string, double> per_dataset_accuracy;
    std::map<std::string, std::size_t> test_sizes;
    double macro = 0;
    double micro = 0;
};
ClassificationReport aggregate_report(const std::map<std::string, double>& per_dataset,
                                      const std::map<std::string, std::size_t>& test_sizes);
nlohmann::json to_json(const ClassificationReport& r);

}  // namespace rsic::classification
