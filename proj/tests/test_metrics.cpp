#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles/metric_oracles.hpp"
#include "rsic/metrics/metrics.hpp"

using namespace rsic;
using namespace rsic::metrics;

namespace {

std::vector<EvalPair> to_pairs(const std::vector<oracle::GoldenPair>& golden) {
    std::vector<EvalPair> out;
    for (std::size_t i = 0; i < golden.size(); ++i)
        out.push_back(make_eval_pair(std::to_string(i), golden[i].hyp, golden[i].refs));
    return out;
}

std::vector<EvalPair> single(const std::string& hyp, const std::vector<std::string>& refs) {
    return {make_eval_pair("0", hyp, refs)};
}

}  // namespace

TEST_CASE("word tokenization") {
    CHECK(tokenize_words("A river, runs THROUGH here.") == Words{"a", "river", "runs", "through", "here"});
    CHECK(tokenize_words("   ").empty());
}

TEST_CASE("porter stemmer on reference vocabulary") {
    const std::vector<std::pair<std::string, std::string>> cases = {
        {"caresses", "caress"}, {"ponies", "poni"},      {"ties", "ti"},          {"cats", "cat"},
        {"feed", "feed"},       {"agreed", "agre"},     {"plastered", "plaster"}, {"motoring", "motor"},
        {"sing", "sing"},       {"conflated", "conflat"}, {"hopping", "hop"},     {"falling", "fall"},
        {"filing", "file"},     {"happy", "happi"},     {"relational", "relat"}, {"generalization", "gener"},
        {"running", "run"},     {"runs", "run"},        {"dogs", "dog"},         {"surrounded", "surround"},
        {"electrical", "electr"}, {"hopefulness", "hope"}, {"adjustment", "adjust"}, {"controll", "control"},
        {"as", "as"},           {"buildings", "build"}, {"trees", "tree"},
    };
    for (const auto& [word, stem] : cases) {
        CAPTURE(word);
        CHECK(porter_stem(word) == stem);
    }
}

TEST_CASE("golden suite matches the brute-force oracles to 1e-9") {
    const auto& golden = oracle::golden_suite();
    const auto pairs = to_pairs(golden);
    for (int n = 1; n <= 4; ++n) {
        CAPTURE(n);
        CHECK(std::abs(bleu(pairs, n) - oracle::bleu(golden, n)) < 1e-9);
    }
    CHECK(std::abs(rouge_l(pairs) - oracle::rouge_l(golden)) < 1e-9);
    CHECK(std::abs(meteor(pairs) - oracle::meteor(golden)) < 1e-9);
    CHECK(std::abs(cider(pairs) - oracle::cider(golden)) < 1e-9);
}

TEST_CASE("METEOR alignments agree with the hand counts") {
    for (const auto& g : oracle::golden_suite()) {
        for (std::size_t r = 0; r < g.refs.size(); ++r) {
            CAPTURE(g.hyp);
            CAPTURE(g.refs[r]);
            const MeteorAlignment a = meteor_align(tokenize_words(g.hyp), tokenize_words(g.refs[r]));
            CHECK(a.matches == static_cast<std::size_t>(g.meteor_counts[r].matches));
            CHECK(a.chunks == static_cast<std::size_t>(g.meteor_counts[r].chunks));
        }
    }
}

TEST_CASE("BLEU examples") {
    CHECK(bleu(single("the the the", {"the cat"}), 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const auto same = single("a b c d e", {"a b c d e"});
    for (int n = 1; n <= 4; ++n) CHECK(bleu(same, n) == doctest::Approx(1.0));
    CHECK(bleu(single("x y z", {"a b c"}), 1) == 0.0);
    CHECK_THROWS(bleu(std::vector<EvalPair>{}, 1));
    CHECK_THROWS(bleu(same, 5));
}

TEST_CASE("BLEU brevity penalty uses the closest reference length") {
    // c = 2, closest reference is 3 words: BP = exp(1 - 3/2).
    const auto p = single("a b", {"a b c", "a b c d e f"});
    CHECK(bleu(p, 1) == doctest::Approx(std::exp(1.0 - 1.5)).epsilon(1e-15));
}

TEST_CASE("ROUGE-L examples") {
    CHECK(rouge_l(single("a b c d", {"a b c d"})) == doctest::Approx(1.0));
    CHECK(rouge_l(single("a b c d", {"a c b d"})) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(rouge_l(single("a b", {"c d"})) == 0.0);
    CHECK(rouge_l(single("", {"c d"})) == 0.0);
}

TEST_CASE("METEOR examples") {
    for (int m = 1; m <= 6; ++m) {
        std::string s;
        for (int i = 0; i < m; ++i) s += "w" + std::to_string(i) + " ";
        CHECK(meteor(single(s, {s})) == doctest::Approx(1 - 0.5 * std::pow(1.0 / m, 3.0)).epsilon(1e-15));
    }
    CHECK(meteor(single("a b", {"c d"})) == 0.0);
    const auto stems = single("dogs running", {"dog runs"});
    CHECK(meteor_align(stems[0].hypothesis, stems[0].references[0]).matches == 2);
    CHECK(meteor(stems) > 0.0);
}

TEST_CASE("CIDEr examples") {
    CHECK(cider(single("a b c", {"a b c", "a b"})) == 0.0);
    std::vector<EvalPair> two = {make_eval_pair("x", "red roof house here", {"red roof house here"}),
                                 make_eval_pair("y", "blue lake water there", {"blue lake water there"})};
    CHECK(cider(two) == doctest::Approx(10.0).epsilon(1e-12));
    // Three words carry no 4-gram, so that order contributes 0.
    std::vector<EvalPair> short_caps = {make_eval_pair("x", "red roof house", {"red roof house"}),
                                        make_eval_pair("y", "blue lake water", {"blue lake water"})};
    CHECK(cider(short_caps) == doctest::Approx(7.5).epsilon(1e-12));
    std::vector<EvalPair> disjoint = {make_eval_pair("x", "qq zz", {"red roof house"}),
                                      make_eval_pair("y", "pp ww", {"blue lake water"})};
    CHECK(cider(disjoint) == 0.0);
}

TEST_CASE("metrics are invariant to reference and pair order") {
    const auto pairs = to_pairs(oracle::golden_suite());
    const MetricVector base = evaluate_corpus(pairs);
    auto shuffled = pairs;
    std::mt19937 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        for (auto& p : shuffled) std::shuffle(p.references.begin(), p.references.end(), rng);
        const MetricVector m = evaluate_corpus(shuffled);
        for (std::size_t i = 0; i < 7; ++i) CHECK(m.values()[i] == doctest::Approx(base.values()[i]).epsilon(1e-12));
    }
}

TEST_CASE("ranges and monotone BLEU-1 degradation") {
    std::mt19937 rng(11);
    const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f", "g", "h"};
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1), len(1, 8);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<EvalPair> pairs;
        for (int i = 0; i < 4; ++i) {
            EvalPair p;
            p.image_id = std::to_string(i);
            for (std::size_t k = len(rng); k > 0; --k) p.hypothesis.push_back(vocab[pick(rng)]);
            for (int r = 0; r < 2; ++r) {
                Words ref;
                for (std::size_t k = len(rng); k > 0; --k) ref.push_back(vocab[pick(rng)]);
                p.references.push_back(ref);
            }
            pairs.push_back(p);
        }
        const MetricVector m = evaluate_corpus(pairs);
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(m.values()[i] >= 0.0);
            CHECK(m.values()[i] <= 1.0 + 1e-12);
        }
        CHECK(m.cider >= 0.0);
        CHECK(m.cider <= 10.0 + 1e-9);
        auto degraded = pairs;
        degraded[0].hypothesis[0] = "zzz_oov";
        CHECK(bleu(degraded, 1) <= bleu(pairs, 1) + 1e-15);
    }
}

TEST_CASE("evaluate_corpus composes the per-metric values") {
    std::vector<EvalPair> perfect = {make_eval_pair("x", "red roof house here", {"red roof house here"}),
                                     make_eval_pair("y", "blue lake water near", {"blue lake water near"})};
    const MetricVector m = evaluate_corpus(perfect);
    CHECK(m.bleu1 == doctest::Approx(1.0));
    CHECK(m.bleu4 == doctest::Approx(1.0));
    CHECK(m.rouge_l == doctest::Approx(1.0));
    const double expected_meteor = ((1 - 0.5 * std::pow(1.0 / 4, 3)) + (1 - 0.5 * std::pow(1.0 / 4, 3))) / 2;
    CHECK(m.meteor == doctest::Approx(expected_meteor).epsilon(1e-15));
    CHECK(m.cider == doctest::Approx(10.0));
    std::vector<EvalPair> empty = {make_eval_pair("x", "", {"red roof"}), make_eval_pair("y", "", {"lake"})};
    for (double v : evaluate_corpus(empty).values()) CHECK(v == 0.0);
}
