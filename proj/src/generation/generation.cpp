#include "rsic/generation/generation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "rsic/errors.hpp"

namespace rsic::generation {

std::string to_string(Strategy s) { return s == Strategy::greedy ? "greedy" : "beam"; }

Strategy parse_strategy(const std::string& text) {
    if (text == "greedy") return Strategy::greedy;
    if (text == "beam") return Strategy::beam;
    throw ConfigError("unknown search \"" + text + "\" (expected greedy or beam)");
}

void GenerationConfig::validate() const {
    if (beam_width < 1) throw ConfigError("beam_width must be at least 1");
    if (!(length_penalty >= 0)) throw ConfigError("length_penalty must be non-negative");
    if (max_len < 2) throw ConfigError("max_len must be at least 2");
}

std::vector<std::vector<double>> NextTokenModel::next_token_logits_batch(
    const std::vector<std::vector<TokenId>>& prefixes) const {
    std::vector<std::vector<double>> out;
    out.reserve(prefixes.size());
    for (const auto& p : prefixes) out.push_back(next_token_logits(p));
    return out;
}

BoundCaptioner::BoundCaptioner(const model::CaptionModel& model, nn::Tensor enc) : model_(model), enc_(std::move(enc)) {
    if (enc_.rank() != 3 || enc_.dim(0) != 1) {
        throw nn::ShapeError("bound captioner expects features (1, P, D), got " + nn::shape_string(enc_.shape()));
    }
}

std::vector<double> BoundCaptioner::next_token_logits(std::span<const TokenId> prefix) const {
    return next_token_logits_batch({std::vector<TokenId>(prefix.begin(), prefix.end())}).front();
}

std::vector<std::vector<double>> BoundCaptioner::next_token_logits_batch(
    const std::vector<std::vector<TokenId>>& prefixes) const {
    const std::size_t n = prefixes.size();
    const std::size_t len = prefixes.front().size();
    std::vector<TokenId> ids;
    ids.reserve(n * len);
    for (const auto& p : prefixes) {
        if (p.size() != len) throw std::invalid_argument("batched prefixes must share one length");
        ids.insert(ids.end(), p.begin(), p.end());
    }
    nn::Shape shape = enc_.shape();
    shape[0] = n;
    nn::Tensor enc(shape);
    for (std::size_t b = 0; b < n; ++b) std::copy(enc_.storage().begin(), enc_.storage().end(), enc.data() + b * enc_.size());
    nn::Graph g(nn::Graph::Mode::inference);
    const nn::Tensor logits = model_.decoder().forward(g, ids, n, len, g.constant(std::move(enc))).value();
    const std::size_t v = vocab_size();
    std::vector<std::vector<double>> out(n);
    for (std::size_t b = 0; b < n; ++b) {
        const double* row = logits.data() + (b * len + len - 1) * v;
        out[b].assign(row, row + v);
    }
    return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0;
    for (double x : logits) sum += std::exp(x - mx);
    const double lse = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

namespace {

TokenSequence as_sequence(std::vector<TokenId> ids, std::size_t max_len) {
    TokenSequence seq;
    seq.mask.assign(ids.size(), 1);
    seq.ids = std::move(ids);
    seq.max_len = max_len;
    return seq;
}

std::size_t argmax(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace

std::vector<bool> banned_tokens(std::span<const TokenId> ids, std::size_t n, std::size_t vocab_size) {
    std::vector<bool> banned(vocab_size, false);
    if (n == 0 || ids.size() + 1 < n) return banned;
    // The last n-1 tokens form the prefix of the candidate n-gram.
    const std::size_t k = n - 1;
    const auto tail = ids.subspan(ids.size() - k);
    for (std::size_t start = 0; start + n <= ids.size(); ++start) {
        if (std::equal(tail.begin(), tail.end(), ids.begin() + static_cast<std::ptrdiff_t>(start))) {
            const TokenId next = ids[start + k];
            if (next >= 0 && static_cast<std::size_t>(next) < vocab_size) banned[static_cast<std::size_t>(next)] = true;
        }
    }
    return banned;
}

TokenSequence greedy_generate(const NextTokenModel& model, const GenerationConfig& cfg) {
    cfg.validate();
    std::vector<TokenId> ids = {model.start_id()};
    while (ids.size() < cfg.max_len) {
        const TokenId next = static_cast<TokenId>(argmax(log_softmax(model.next_token_logits(ids))));
        ids.push_back(next);
        if (next == model.end_id()) break;
    }
    return as_sequence(std::move(ids), cfg.max_len);
}

TokenSequence beam_generate(const NextTokenModel& model, const GenerationConfig& cfg) {
    cfg.validate();
    const std::size_t width = cfg.beam_width;
    const std::size_t vocab = model.vocab_size();
    const double p = cfg.length_penalty;
    auto penalized = [p](double cum, std::size_t generated) {
        return p == 0 ? cum : cum / std::pow(static_cast<double>(generated), p);
    };
    // Highest score any continuation of a live beam could still reach.
    const double longest = static_cast<double>(cfg.max_len - 1);
    auto upper_bound = [&](double cum) { return p == 0 ? cum : cum / std::pow(longest, p); };

    struct Finished {
        double score;
        BeamHypothesis hyp;
    };
    std::vector<BeamHypothesis> alive = {{{model.start_id()}, 0.0, false}};
    std::vector<Finished> finished;

    while (!alive.empty() && alive.front().ids.size() < cfg.max_len) {
        std::vector<std::vector<TokenId>> prefixes;
        for (const auto& h : alive) prefixes.push_back(h.ids);
        const auto logits = model.next_token_logits_batch(prefixes);

        struct Candidate {
            double score;
            std::size_t parent;
            double logprob;
            TokenId token;
        };
        std::vector<Candidate> cands;
        cands.reserve(alive.size() * vocab);
        for (std::size_t h = 0; h < alive.size(); ++h) {
            const auto lp = log_softmax(logits[h]);
            std::vector<bool> banned = banned_tokens(alive[h].ids, cfg.no_repeat_ngram, vocab);
            if (std::all_of(banned.begin(), banned.end(), [](bool b) { return b; })) {
                spdlog::warn("every token is banned by the {}-gram rule; ignoring the ban for this step",
                             cfg.no_repeat_ngram);
                banned.assign(vocab, false);
            }
            for (std::size_t t = 0; t < vocab; ++t) {
                if (!banned[t]) cands.push_back({alive[h].cum_logprob + lp[t], h, lp[t], static_cast<TokenId>(t)});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.parent != b.parent) return a.parent < b.parent;
            if (a.logprob != b.logprob) return a.logprob > b.logprob;
            return a.token < b.token;
        });

        std::vector<BeamHypothesis> next;
        for (std::size_t rank = 0; rank < cands.size() && next.size() < width; ++rank) {
            const Candidate& c = cands[rank];
            BeamHypothesis h{alive[c.parent].ids, c.score, false};
            h.ids.push_back(c.token);
            if (c.token == model.end_id()) {
                if (rank < width) {
                    h.finished = true;
                    finished.push_back({penalized(c.score, h.ids.size() - 1), std::move(h)});
                }
            } else {
                next.push_back(std::move(h));
            }
        }
        alive = std::move(next);

        if (finished.size() >= width) break;
        if (!finished.empty() && !alive.empty()) {
            double best_finished = -std::numeric_limits<double>::infinity();
            for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
            double best_bound = -std::numeric_limits<double>::infinity();
            for (const auto& h : alive) best_bound = std::max(best_bound, upper_bound(h.cum_logprob));
            if (best_bound <= best_finished) break;
        }
    }

    if (!finished.empty()) {
        const Finished* best = &finished.front();
        for (const auto& f : finished)
            if (f.score > best->score) best = &f;
        return as_sequence(best->hyp.ids, cfg.max_len);
    }
    const BeamHypothesis* best = &alive.front();
    for (const auto& h : alive)
        if (h.cum_logprob > best->cum_logprob) best = &h;
    return as_sequence(best->ids, cfg.max_len);
}

TokenSequence generate(const NextTokenModel& model, const GenerationConfig& cfg) {
    return cfg.strategy == Strategy::greedy ? greedy_generate(model, cfg) : beam_generate(model, cfg);
}

std::vector<std::string> caption_features(const model::CaptionModel& model, const corpus::Vocabulary& vocab,
                                          const nn::Tensor& features, const GenerationConfig& cfg) {
    std::vector<std::string> out;
    const std::size_t per = features.size() / features.dim(0);
    for (std::size_t b = 0; b < features.dim(0); ++b) {
        nn::Tensor one({1, features.dim(1), features.dim(2)});
        std::copy(features.data() + b * per, features.data() + (b + 1) * per, one.data());
        const BoundCaptioner captioner(model, std::move(one));
        out.push_back(corpus::decode_tokens(vocab, generate(captioner, cfg).ids));
    }
    return out;
}

std::vector<AttentionMap> extract_attention_maps(const model::CaptionModel& model, const nn::Tensor& enc,
                                                 const TokenSequence& generated) {
    const std::size_t n = generated.length();
    if (n < 2) throw std::invalid_argument("attention maps need at least one generated token");
    if (enc.rank() != 3 || enc.dim(0) != 1) throw nn::ShapeError("attention maps expect features (1, P, D)");
    const std::vector<TokenId> input(generated.ids.begin(), generated.ids.begin() + static_cast<std::ptrdiff_t>(n - 1));
    std::vector<nn::Tensor> cross;
    model::DecoderOptions opt;
    opt.cross_probs = &cross;
    nn::Graph g(nn::Graph::Mode::inference);
    model.decoder().forward(g, input, 1, input.size(), g.constant(enc), opt);
    const nn::Tensor& last = cross.back();  // (1, H, T, P)
    const std::size_t heads = last.dim(1), steps = last.dim(2), patches = last.dim(3);
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(patches))));
    std::vector<AttentionMap> maps;
    for (std::size_t t = 0; t < steps; ++t) {
        AttentionMap m{generated.ids[t + 1], side, std::vector<double>(patches, 0.0)};
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t pch = 0; pch < patches; ++pch) m.weights[pch] += last.at({0, h, t, pch}) / heads;
        maps.push_back(std::move(m));
    }
    return maps;
}

std::vector<SweepRow> beam_sweep(std::span<const SweepItem> items, const corpus::Vocabulary& vocab,
                                 const GenerationConfig& base, std::span<const std::size_t> widths) {
    if (widths.empty()) throw std::invalid_argument("beam sweep needs at least one width");
    if (items.empty()) throw std::invalid_argument("beam sweep needs at least one item");
    std::vector<SweepRow> rows;
    for (std::size_t w : widths) {
        GenerationConfig cfg = base;
        cfg.strategy = Strategy::beam;
        cfg.beam_width = w;
        std::vector<metrics::EvalPair> pairs;
        for (const auto& item : items) {
            const std::string caption = corpus::decode_tokens(vocab, beam_generate(*item.model, cfg).ids);
            pairs.push_back(metrics::make_eval_pair(item.image_id, caption, item.references));
        }
        SweepRow row{w, metrics::evaluate_corpus(pairs), 0.0};
        row.cider_norm = row.scores.cider / 10.0;
        rows.push_back(row);
        spdlog::info("beam width {}: BLEU-4 {:.4f} CIDEr {:.4f}", w, row.scores.bleu4, row.scores.cider);
    }
    return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "width";
    for (const char* n : metrics::MetricVector::names()) out << ',' << n;
    out << ",cider_norm\n";
    char buf[64];
    for (const auto& r : rows) {
        out << r.width;
        for (double v : r.scores.values()) {
            std::snprintf(buf, sizeof buf, ",%.10g", v);
            out << buf;
        }
        std::snprintf(buf, sizeof buf, ",%.10g\n", r.cider_norm);
        out << buf;
    }
}

void plot_sweep(const std::filesystem::path& path, std::span<const SweepRow> rows) {
    if (rows.empty()) throw std::invalid_argument("nothing to plot");
    const int width = 160 + 100 * static_cast<int>(rows.size()), height = 480;
    const int left = 60, right = width - 150, top = 30, bottom = height - 60;
    cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    const std::array<cv::Scalar, 7> colors = {cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255),
                                              cv::Scalar(44, 160, 44),  cv::Scalar(40, 39, 214),
                                              cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140),
                                              cv::Scalar(194, 119, 227)};
    const std::array<const char*, 7> labels = {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr/10"};
    for (int tick = 0; tick <= 4; ++tick) {
        const int y = bottom - (bottom - top) * tick / 4;
        cv::line(img, {left, y}, {right, y}, cv::Scalar(220, 220, 220), 1);
        char txt[16];
        std::snprintf(txt, sizeof txt, "%.2f", tick / 4.0);
        cv::putText(img, txt, {8, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
    }
    cv::line(img, {left, bottom}, {right, bottom}, cv::Scalar(0, 0, 0), 1);
    const int group = (right - left) / static_cast<int>(rows.size());
    const int bar = std::max(2, (group - 12) / 7);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto vals = rows[r].scores.values();
        vals[6] = rows[r].cider_norm;
        const int x0 = left + static_cast<int>(r) * group + 6;
        for (int k = 0; k < 7; ++k) {
            const int h = static_cast<int>(std::clamp(vals[k], 0.0, 1.0) * (bottom - top));
            cv::rectangle(img, {x0 + k * bar, bottom - h}, {x0 + (k + 1) * bar - 1, bottom}, colors[k], cv::FILLED);
        }
        cv::putText(img, std::to_string(rows[r].width), {x0 + 3 * bar, bottom + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                    cv::Scalar(0, 0, 0), 1);
    }
    cv::putText(img, "beam width", {(left + right) / 2 - 40, height - 20}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                cv::Scalar(0, 0, 0), 1);
    for (int k = 0; k < 7; ++k) {
        const int y = top + 10 + 22 * k;
        cv::rectangle(img, {right + 15, y - 10}, {right + 29, y + 2}, colors[k], cv::FILLED);
        cv::putText(img, labels[k], {right + 35, y}, cv::FONT_HERSHEY_SIMPLEX, 0.42, cv::Scalar(0, 0, 0), 1);
    }
    if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace rsic::generation
