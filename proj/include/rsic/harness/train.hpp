#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rsic/corpus/dataset.hpp"
#include "rsic/harness/config.hpp"
#include "rsic/metrics/metrics.hpp"

namespace rsic::harness {

struct TrainState {
    std::size_t epoch = 0;
    std::size_t global_step = 0;
    double best_val_rouge_l = -1;
    std::size_t epochs_since_best = 0;
    std::string rng_state;
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;
    double val_rouge_l = 0;
    double last_lr = 0;
    double max_pre_clip_norm = 0;
    double max_post_clip_norm = 0;
    bool improved = false;
};

struct TrainHooks {
    std::function<void(const EpochLog&)> on_epoch;
    // Called after every optimizer step with (step, lr, pre-clip norm, post-clip norm).
    std::function<void(std::size_t, double, double, double)> on_step;
};

struct TrainResult {
    std::filesystem::path checkpoint;  // best-ROUGE-L checkpoint directory
    std::vector<EpochLog> log;
    TrainState state;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
};

// Teacher-forced AdamW training with warm-up/decay schedule, gradient clipping and
// early stopping on greedy val ROUGE-L. Writes the best checkpoint to out_dir.
TrainResult train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

// Checkpoint directory: model.rsic (tensor archive), model.json (sidecar), tokenizer.json.
struct Checkpoint {
    ExperimentConfig config;
    std::unique_ptr<model::CaptionModel> model;
    corpus::Vocabulary vocab;
    std::size_t epoch = 0;
    double val_rouge_l = 0;
    std::string config_hash;
};
void save_checkpoint(const std::filesystem::path& dir, const ExperimentConfig& cfg, const model::CaptionModel& model,
                     const corpus::Vocabulary& vocab, std::size_t epoch, double val_rouge_l);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Model config implied by an experiment and a trained vocabulary.
model::ModelConfig model_config(const ExperimentConfig& cfg, std::size_t vocab_size, std::size_t max_len);

struct CaptionOutput {
    std::string image_id;
    std::string caption;
    std::vector<std::string> references;
};
// Generated captions for every record of `records`, batched through the encoder.
std::vector<CaptionOutput> caption_records(const model::CaptionModel& model, const corpus::Vocabulary& vocab,
                                           const std::vector<corpus::CaptionRecord>& records, std::size_t image_size,
                                           const generation::GenerationConfig& gen, std::size_t batch = 16);
metrics::MetricVector score_captions(const std::vector<CaptionOutput>& captions);

// Decoding length never exceeds the decoder's position table.
generation::GenerationConfig effective_generation(const generation::GenerationConfig& gen, std::size_t decoder_max_len);

}  // namespace rsic::harness
