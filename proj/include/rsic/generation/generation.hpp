#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rsic/corpus/tokenizer.hpp"
#include "rsic/metrics/metrics.hpp"
#include "rsic/model/caption_model.hpp"

namespace rsic::generation {

using corpus::TokenId;
using corpus::TokenSequence;

enum class Strategy { greedy, beam };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);  // ConfigError

struct GenerationConfig {
    Strategy strategy = Strategy::greedy;
    std::size_t beam_width = 5;
    double length_penalty = 2.0;
    std::size_t no_repeat_ngram = 3;  // 0 disables
    std::size_t max_len = 40;         // total tokens, start included

    void validate() const;  // ConfigError
};

struct BeamHypothesis {
    std::vector<TokenId> ids;
    double cum_logprob = 0;
    bool finished = false;
};

// Anything that scores the next token given a prefix starting with the start id.
class NextTokenModel {
  public:
    virtual ~NextTokenModel() = default;
    virtual std::size_t vocab_size() const = 0;
    virtual std::vector<double> next_token_logits(std::span<const TokenId> prefix) const = 0;
    // Equal-length prefixes scored together; the default loops.
    virtual std::vector<std::vector<double>> next_token_logits_batch(
        const std::vector<std::vector<TokenId>>& prefixes) const;
    virtual TokenId start_id() const { return corpus::Vocabulary::kStart; }
    virtual TokenId end_id() const { return corpus::Vocabulary::kEnd; }
};

// A caption model bound to one image's encoder output (1, P, D).
class BoundCaptioner : public NextTokenModel {
  public:
    BoundCaptioner(const model::CaptionModel& model, nn::Tensor enc);

    std::size_t vocab_size() const override { return model_.decoder().config().vocab_size; }
    std::vector<double> next_token_logits(std::span<const TokenId> prefix) const override;
    std::vector<std::vector<double>> next_token_logits_batch(
        const std::vector<std::vector<TokenId>>& prefixes) const override;

  private:
    const model::CaptionModel& model_;
    nn::Tensor enc_;
};

// Log-softmax of one logit row.
std::vector<double> log_softmax(std::span<const double> logits);

// Starts from [start]; appends the highest log-probability token (lower id on ties)
// until end is produced or max_len tokens exist.
TokenSequence greedy_generate(const NextTokenModel& model, const GenerationConfig& cfg);

// Beam search. Candidates are ranked by cumulative log-probability; an end token
// ranked within the beam retires its hypothesis to the finished pool with score
// cum_logprob / len^length_penalty (len counts generated tokens, end included).
// Stops when the pool holds beam_width hypotheses, when no live beam can still beat
// the best finished score, or at max_len. Returns the best finished hypothesis, or
// the best live one if none finished.
TokenSequence beam_generate(const NextTokenModel& model, const GenerationConfig& cfg);

TokenSequence generate(const NextTokenModel& model, const GenerationConfig& cfg);

// Tokens that would repeat an n-gram already present in `ids`.
std::vector<bool> banned_tokens(std::span<const TokenId> ids, std::size_t n, std::size_t vocab_size);

// Decoded caption per image of a pre-encoded batch (B, P, D).
std::vector<std::string> caption_features(const model::CaptionModel& model, const corpus::Vocabulary& vocab,
                                          const nn::Tensor& features, const GenerationConfig& cfg);

struct AttentionMap {
    TokenId token = 0;
    std::size_t side = 0;
    std::vector<double> weights;  // side x side, row-major
};

// Final-layer cross-attention for every generated token (end included), averaged
// over heads and laid out on the sqrt(P) x sqrt(P) patch grid.
std::vector<AttentionMap> extract_attention_maps(const model::CaptionModel& model, const nn::Tensor& enc,
                                                 const TokenSequence& generated);

struct SweepRow {
    std::size_t width = 0;
    metrics::MetricVector scores;
    double cider_norm = 0;  // cider / 10, the metric's full range
};

// One model per test item, paired with that item's reference captions.
struct SweepItem {
    const NextTokenModel* model = nullptr;
    std::string image_id;
    std::vector<std::string> references;
};

// Beam search at every width (other settings from `base`) over the items.
std::vector<SweepRow> beam_sweep(std::span<const SweepItem> items, const corpus::Vocabulary& vocab,
                                 const GenerationConfig& base, std::span<const std::size_t> widths);

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);
// Grouped bar chart of the seven scores per width (CIDEr normalized).
void plot_sweep(const std::filesystem::path& path, std::span<const SweepRow> rows);

}  // namespace rsic::generation
