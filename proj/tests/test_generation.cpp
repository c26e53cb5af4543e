#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "rsic/generation/generation.hpp"
#include "support/fd.hpp"
#include "support/rigged.hpp"

using namespace rsic;
using namespace rsic::generation;
using test::HashModel;
using test::TableModel;

namespace {

constexpr TokenId kS = 0, kE = 2;

GenerationConfig beam_cfg(std::size_t width, double penalty, std::size_t no_repeat, std::size_t max_len) {
    GenerationConfig c;
    c.strategy = Strategy::beam;
    c.beam_width = width;
    c.length_penalty = penalty;
    c.no_repeat_ngram = no_repeat;
    c.max_len = max_len;
    return c;
}

bool has_repeated_ngram(const std::vector<TokenId>& ids, std::size_t n) {
    std::set<std::vector<TokenId>> seen;
    for (std::size_t i = 0; i + n <= ids.size(); ++i)
        if (!seen.insert(std::vector<TokenId>(ids.begin() + i, ids.begin() + i + n)).second) return true;
    return false;
}

struct Best {
    double score = -std::numeric_limits<double>::infinity();
    std::vector<TokenId> ids;
};

// Exhaustive search over every sequence of at most `steps` generated tokens.
void enumerate(const generation::NextTokenModel& m, std::vector<TokenId>& ids, double cum, std::size_t steps,
               double p, Best& fin, Best& open) {
    const auto lp = log_softmax(m.next_token_logits(ids));
    for (std::size_t t = 0; t < lp.size(); ++t) {
        ids.push_back(static_cast<TokenId>(t));
        const double c = cum + lp[t];
        const std::size_t len = ids.size() - 1;
        if (static_cast<TokenId>(t) == kE) {
            const double s = p == 0 ? c : c / std::pow(static_cast<double>(len), p);
            if (s > fin.score) fin = {s, ids};
        } else if (len == steps) {
            if (c > open.score) open = {c, ids};
        } else {
            enumerate(m, ids, c, steps, p, fin, open);
        }
        ids.pop_back();
    }
}

double penalized(const generation::NextTokenModel& m, const std::vector<TokenId>& ids, double p) {
    double cum = 0;
    for (std::size_t i = 1; i < ids.size(); ++i) {
        cum += log_softmax(m.next_token_logits(std::span<const TokenId>(ids.data(), i)))[ids[i]];
    }
    return p == 0 ? cum : cum / std::pow(static_cast<double>(ids.size() - 1), p);
}

}  // namespace

TEST_CASE("greedy stops at end when the model favors it") {
    TableModel m(6, [](std::span<const TokenId>) { return test::log_dist(6, {{kE, 0.9}}); });
    GenerationConfig cfg;
    CHECK(greedy_generate(m, cfg).ids == std::vector<TokenId>{kS, kE});
}

TEST_CASE("greedy follows the unique argmax path of a rigged 3-step model") {
    TableModel m(6, [](std::span<const TokenId> p) {
        switch (p.size()) {
            case 1:
                return test::log_dist(6, {{4, 0.5}, {3, 0.3}});
            case 2:
                return test::log_dist(6, {{5, 0.6}});
            default:
                return test::log_dist(6, {{kE, 0.7}});
        }
    });
    // Oracle: walk the table picking the largest entry at each prefix.
    std::vector<TokenId> expected = {kS};
    while (expected.back() != kE) {
        const auto row = m.next_token_logits(expected);
        expected.push_back(static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    CHECK(expected == std::vector<TokenId>{kS, 4, 5, kE});
    CHECK(greedy_generate(m, GenerationConfig{}).ids == expected);
}

TEST_CASE("greedy respects max_len and ties go to the lower id") {
    TableModel m(5, [](std::span<const TokenId>) { return std::vector<double>{0, 0, -5, 1, 1}; });
    GenerationConfig cfg;
    cfg.max_len = 4;
    CHECK(greedy_generate(m, cfg).ids == std::vector<TokenId>{kS, 3, 3, 3});
}

TEST_CASE("beam(2) finds the path greedy misses") {
    TableModel m(8, [](std::span<const TokenId> p) {
        if (p.size() == 1) return test::log_dist(8, {{3, std::exp(-0.5)}, {4, std::exp(-1.0)}});
        if (p[1] == 3) return test::log_dist(8, {{kE, std::exp(-1.5)}});
        return test::log_dist(8, {{kE, std::exp(-0.5)}});
    });
    GenerationConfig g;
    g.max_len = 3;
    CHECK(greedy_generate(m, g).ids == std::vector<TokenId>{kS, 3, kE});
    Best fin, open;
    std::vector<TokenId> ids = {kS};
    enumerate(m, ids, 0, 2, 2.0, fin, open);
    CHECK(fin.ids == std::vector<TokenId>{kS, 4, kE});
    CHECK(fin.score * 4 == doctest::Approx(-1.5));
    CHECK(beam_generate(m, beam_cfg(2, 2.0, 3, 3)).ids == fin.ids);
}

TEST_CASE("beam(1) with raw length normalization and no bans equals greedy") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        HashModel m(9, seed);
        GenerationConfig g;
        g.max_len = 12;
        CHECK(beam_generate(m, beam_cfg(1, 1.0, 0, 12)).ids == greedy_generate(m, g).ids);
    }
}

TEST_CASE("beam with full width is globally optimal on small rigged models") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const std::size_t vocab = 4 + seed % 5;
        const std::size_t steps = 2 + seed % 3;
        const double p = std::array<double, 4>{0.0, 0.5, 1.0, 2.0}[seed % 4];
        HashModel m(vocab, seed + 100, 1.5);
        Best fin, open;
        std::vector<TokenId> ids = {kS};
        enumerate(m, ids, 0, steps, p, fin, open);
        const std::size_t width = static_cast<std::size_t>(std::pow(vocab, steps));
        const auto out = beam_generate(m, beam_cfg(width, p, 0, steps + 1));
        CAPTURE(seed);
        REQUIRE(out.ids.back() == kE);
        CHECK(penalized(m, out.ids, p) == doctest::Approx(fin.score).epsilon(1e-12));
    }
}

TEST_CASE("no-repeat n-gram ban on a repeat-loving model") {
    // Prefers alternating 3, 4, 3, 4, ... and never wants to stop.
    TableModel m(7, [](std::span<const TokenId> p) {
        const TokenId next = p.back() == 3 ? 4 : 3;
        return test::log_dist(7, {{next, 0.8}, {kE, 1e-6}});
    });
    for (std::size_t n : {2u, 3u, 4u}) {
        for (std::size_t width : {1u, 3u, 5u}) {
            const auto out = beam_generate(m, beam_cfg(width, 2.0, n, 24));
            CAPTURE(n);
            CAPTURE(width);
            CHECK_FALSE(has_repeated_ngram(out.ids, n));
        }
    }
    GenerationConfig g;
    g.max_len = 10;
    CHECK(has_repeated_ngram(greedy_generate(m, g).ids, 3));
}

TEST_CASE("banned_tokens lists continuations of earlier n-grams") {
    const std::vector<TokenId> ids = {0, 3, 4, 3, 4};
    const auto b = banned_tokens(ids, 3, 6);
    CHECK(b[3]);
    CHECK_FALSE(b[4]);
    CHECK(banned_tokens(ids, 2, 6)[3]);
    CHECK_FALSE(banned_tokens(std::vector<TokenId>{0, 3, 4, 3}, 3, 6)[4]);
    for (bool x : banned_tokens(ids, 0, 6)) CHECK_FALSE(x);
}

TEST_CASE("fully banned steps fall back to the unconstrained choice") {
    // Vocabulary {start, pad, end, a}: with n = 1 every seen token is banned.
    TableModel m(4, [](std::span<const TokenId>) { return test::log_dist(4, {{3, 0.97}}); });
    const auto out = beam_generate(m, beam_cfg(1, 1.0, 1, 6));
    CHECK(out.ids.size() >= 2);
}

TEST_CASE("generated sequences start with start and end with end or fill max_len") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        HashModel m(10, seed);
        for (const auto& cfg : {beam_cfg(3, 2.0, 3, 9), beam_cfg(1, 0.0, 0, 9)}) {
            const auto out = generate(m, cfg);
            CHECK(out.ids.front() == kS);
            CHECK((out.ids.back() == kE || out.ids.size() == 9));
        }
    }
}

TEST_CASE("config validation") {
    GenerationConfig c;
    c.beam_width = 0;
    CHECK_THROWS(c.validate());
    c = {};
    c.length_penalty = -1;
    CHECK_THROWS(c.validate());
    CHECK(parse_strategy("beam") == Strategy::beam);
    CHECK_THROWS(parse_strategy("sample"));
}

namespace {

model::ModelConfig tiny_model(std::size_t patches, std::uint64_t seed) {
    model::ModelConfig cfg;
    cfg.encoder.backbone.name = "toy";
    cfg.encoder.backbone.out_channels = 8;
    cfg.encoder.patch_count = patches;
    cfg.encoder.feature_width = 8;
    cfg.encoder.layers = 1;
    cfg.encoder.heads = 2;
    cfg.decoder.layers = 2;
    cfg.decoder.heads = 2;
    cfg.decoder.width = 8;
    cfg.decoder.vocab_size = 270;
    cfg.decoder.max_len = 12;
    cfg.seed = seed;
    return cfg;
}

nn::Tensor images(std::size_t b, std::uint64_t seed) {
    nn::Rng rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    nn::Tensor t({b, 16, 16, 3});
    for (double& v : t.values()) v = u(rng);
    return t;
}

}  // namespace

TEST_CASE("bound captioner batches agree with single prefixes") {
    model::CaptionModel model(tiny_model(4, 1));
    const nn::Tensor enc = model.encode_images(images(1, 2));
    BoundCaptioner c(model, enc);
    const std::vector<std::vector<TokenId>> prefixes = {{0, 5, 6}, {0, 7, 8}};
    const auto batch = c.next_token_logits_batch(prefixes);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto one = c.next_token_logits(prefixes[i]);
        for (std::size_t v = 0; v < one.size(); ++v) CHECK(batch[i][v] == doctest::Approx(one[v]).epsilon(1e-12));
    }
}

TEST_CASE("beam(1) equals greedy on random caption models") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        model::CaptionModel model(tiny_model(4, seed));
        for (auto& [name, p] : model.params().items())
            for (double& v : p.value.values()) v *= 20.0;
        BoundCaptioner c(model, model.encode_images(images(1, seed)));
        GenerationConfig g;
        g.max_len = 12;
        CHECK(beam_generate(c, beam_cfg(1, 1.0, 0, 12)).ids == greedy_generate(c, g).ids);
    }
}

TEST_CASE("identical images give identical captions") {
    model::CaptionModel model(tiny_model(4, 3));
    nn::Tensor one = images(1, 5);
    nn::Tensor two({2, 16, 16, 3});
    std::copy(one.storage().begin(), one.storage().end(), two.data());
    std::copy(one.storage().begin(), one.storage().end(), two.data() + one.size());
    corpus::Vocabulary vocab;
    GenerationConfig g;
    g.max_len = 12;
    const auto caps = caption_features(model, vocab, model.encode_images(two), g);
    CHECK(caps[0] == caps[1]);
}

TEST_CASE("attention maps: one per generated token, each summing to one") {
    model::CaptionModel model(tiny_model(4, 4));
    const nn::Tensor enc = model.encode_images(images(1, 6));
    BoundCaptioner c(model, enc);
    GenerationConfig g;
    g.max_len = 7;
    const auto seq = greedy_generate(c, g);
    const auto maps = extract_attention_maps(model, enc, seq);
    CHECK(maps.size() == seq.ids.size() - 1);
    for (std::size_t i = 0; i < maps.size(); ++i) {
        CHECK(maps[i].side == 2);
        CHECK(maps[i].token == seq.ids[i + 1]);
        double sum = 0;
        for (double w : maps[i].weights) sum += w;
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    model::CaptionModel single(tiny_model(1, 4));
    const nn::Tensor enc1 = single.encode_images(images(1, 6));
    for (const auto& m : extract_attention_maps(single, enc1, seq)) {
        CHECK(m.side == 1);
        CHECK(m.weights == std::vector<double>{1.0});
    }
}

TEST_CASE("beam sweep rows") {
    corpus::Vocabulary vocab;
    // Token ids 4 + byte value are the raw byte tokens.
    const TokenId a = 4 + 'a', sp = 4 + ' ', b = 4 + 'b';
    TableModel fixed(vocab.size(), [&](std::span<const TokenId> p) {
        const std::vector<TokenId> script = {kS, a, sp, b, kE};
        return test::log_dist(vocab.size(), {{script[std::min(p.size(), script.size() - 1)], 0.99}});
    });
    std::vector<SweepItem> items = {{&fixed, "img0", {"a b", "a c"}}, {&fixed, "img1", {"a b"}}};
    GenerationConfig base;
    base.max_len = 10;
    std::vector<std::size_t> widths;
    for (std::size_t w = 2; w <= 10; ++w) widths.push_back(w);
    const auto rows = beam_sweep(items, vocab, base, widths);
    REQUIRE(rows.size() == 9);
    for (const auto& r : rows) {
        CHECK(r.scores == rows[0].scores);
        CHECK(r.cider_norm == doctest::Approx(r.scores.cider / 10));
    }
    CHECK(rows[0].scores.bleu1 == doctest::Approx(1.0));

    HashModel noisy(vocab.size(), 5, 3.0);
    std::vector<SweepItem> noisy_items = {{&noisy, "x", {"a b"}}, {&noisy, "y", {"b a"}}};
    GenerationConfig raw = base;
    raw.length_penalty = 1.0;
    raw.no_repeat_ngram = 0;
    const std::vector<std::size_t> one = {1};
    const auto row = beam_sweep(noisy_items, vocab, raw, one).front();
    std::vector<metrics::EvalPair> greedy_pairs;
    for (const auto& it : noisy_items) {
        greedy_pairs.push_back(metrics::make_eval_pair(
            it.image_id, corpus::decode_tokens(vocab, greedy_generate(*it.model, raw).ids), it.references));
    }
    CHECK(row.scores == metrics::evaluate_corpus(greedy_pairs));

    const auto dir = std::filesystem::temp_directory_path();
    write_sweep_csv(dir / "rsic_sweep.csv", rows);
    plot_sweep(dir / "rsic_sweep.png", rows);
    std::ifstream in(dir / "rsic_sweep.csv");
    std::size_t lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    CHECK(lines == 10);
    CHECK(std::filesystem::file_size(dir / "rsic_sweep.png") > 0);
}
