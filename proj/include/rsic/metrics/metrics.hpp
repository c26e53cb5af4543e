#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rsic::metrics {

using Words = std::vector<std::string>;

// Lowercase, punctuation dropped, split on whitespace.
Words tokenize_words(std::string_view text);

struct EvalPair {
    std::string image_id;
    Words hypothesis;
    std::vector<Words> references;  // 1..5
};

EvalPair make_eval_pair(std::string image_id, std::string_view hypothesis, const std::vector<std::string>& references);

struct MetricVector {
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
    double meteor = 0;
    double rouge_l = 0;
    double cider = 0;

    // Order: bleu1..bleu4, meteor, rouge_l, cider.
    std::array<double, 7> values() const { return {bleu1, bleu2, bleu3, bleu4, meteor, rouge_l, cider}; }
    static MetricVector from_values(const std::array<double, 7>& v);
    static const std::array<const char*, 7>& names();

    friend bool operator==(const MetricVector&, const MetricVector&) = default;
};

struct MeteorParams {
    double alpha = 0.9;
    double beta = 3.0;
    double gamma = 0.5;
};

constexpr double kRougeBeta = 1.2;
constexpr double kCiderSigma = 6.0;

// Corpus BLEU-n (uniform weights over orders 1..n, no smoothing). Throws on an
// empty corpus or n outside 1..4.
double bleu(std::span<const EvalPair> pairs, int n);

double rouge_l_pair(const Words& hyp, const std::vector<Words>& refs);
double rouge_l(std::span<const EvalPair> pairs);

struct MeteorAlignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
};
// Exact matches first, then Porter-stem matches over the leftovers.
MeteorAlignment meteor_align(const Words& hyp, const Words& ref);
double meteor_pair(const Words& hyp, const std::vector<Words>& refs, const MeteorParams& params = {});
double meteor(std::span<const EvalPair> pairs, const MeteorParams& params = {});

// CIDEr-D: idf over the reference sets of the corpus, clipped tf-idf cosine per
// order 1..4 with Gaussian length damping, averaged and scaled by 10.
double cider(std::span<const EvalPair> pairs);

MetricVector evaluate_corpus(std::span<const EvalPair> pairs);

std::string porter_stem(const std::string& word);

}  // namespace rsic::metrics
