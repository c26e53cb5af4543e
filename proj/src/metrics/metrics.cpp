#include "rsic/metrics/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace rsic::metrics {

namespace {

using NgramCounts = std::map<Words, std::size_t>;

NgramCounts ngrams(const Words& w, std::size_t n) {
    NgramCounts counts;
    if (w.size() < n) return counts;
    for (std::size_t i = 0; i + n <= w.size(); ++i) ++counts[Words(w.begin() + i, w.begin() + i + n)];
    return counts;
}

void require_corpus(std::span<const EvalPair> pairs, const char* metric) {
    if (pairs.empty()) throw std::invalid_argument(std::string(metric) + " needs a non-empty corpus");
    for (const auto& p : pairs) {
        if (p.references.empty()) {
            throw std::invalid_argument(std::string(metric) + ": pair " + p.image_id + " has no references");
        }
    }
}

std::size_t lcs_length(const Words& a, const Words& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

Words tokenize_words(std::string_view text) {
    Words out;
    std::string cur;
    for (char c : text) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isspace(uc)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else if (!std::ispunct(uc)) {
            cur.push_back(static_cast<char>(std::tolower(uc)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

EvalPair make_eval_pair(std::string image_id, std::string_view hypothesis, const std::vector<std::string>& references) {
    EvalPair p{std::move(image_id), tokenize_words(hypothesis), {}};
    for (const auto& r : references) p.references.push_back(tokenize_words(r));
    return p;
}

MetricVector MetricVector::from_values(const std::array<double, 7>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

const std::array<const char*, 7>& MetricVector::names() {
    static const std::array<const char*, 7> n = {"bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l", "cider"};
    return n;
}

double bleu(std::span<const EvalPair> pairs, int n) {
    require_corpus(pairs, "BLEU");
    if (n < 1 || n > 4) throw std::invalid_argument("BLEU order must be in 1..4");
    std::vector<double> matched(static_cast<std::size_t>(n), 0.0), total(static_cast<std::size_t>(n), 0.0);
    double c = 0, r = 0;
    for (const auto& p : pairs) {
        const double hyp_len = static_cast<double>(p.hypothesis.size());
        c += hyp_len;
        // Closest reference length, shorter on ties.
        double best = -1;
        for (const auto& ref : p.references) {
            const double len = static_cast<double>(ref.size());
            if (best < 0 || std::abs(len - hyp_len) < std::abs(best - hyp_len) ||
                (std::abs(len - hyp_len) == std::abs(best - hyp_len) && len < best)) {
                best = len;
            }
        }
        r += best;
        for (int k = 1; k <= n; ++k) {
            const NgramCounts hyp = ngrams(p.hypothesis, static_cast<std::size_t>(k));
            NgramCounts max_ref;
            for (const auto& ref : p.references)
                for (const auto& [g, cnt] : ngrams(ref, static_cast<std::size_t>(k)))
                    max_ref[g] = std::max(max_ref[g], cnt);
            for (const auto& [g, cnt] : hyp) {
                auto it = max_ref.find(g);
                if (it != max_ref.end()) matched[k - 1] += static_cast<double>(std::min(cnt, it->second));
                total[k - 1] += static_cast<double>(cnt);
            }
        }
    }
    if (c == 0) return 0.0;
    double log_sum = 0;
    for (int k = 0; k < n; ++k) {
        if (matched[k] == 0 || total[k] == 0) return 0.0;
        log_sum += std::log(matched[k] / total[k]);
    }
    const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
    return bp * std::exp(log_sum / n);
}

double rouge_l_pair(const Words& hyp, const std::vector<Words>& refs) {
    if (hyp.empty()) return 0.0;
    double best = 0;
    const double b2 = kRougeBeta * kRougeBeta;
    for (const auto& ref : refs) {
        if (ref.empty()) continue;
        const double lcs = static_cast<double>(lcs_length(hyp, ref));
        if (lcs == 0) continue;
        const double p = lcs / static_cast<double>(hyp.size());
        const double r = lcs / static_cast<double>(ref.size());
        best = std::max(best, (1 + b2) * p * r / (r + b2 * p));
    }
    return best;
}

double rouge_l(std::span<const EvalPair> pairs) {
    require_corpus(pairs, "ROUGE-L");
    double sum = 0;
    for (const auto& p : pairs) sum += rouge_l_pair(p.hypothesis, p.references);
    return sum / static_cast<double>(pairs.size());
}

MeteorAlignment meteor_align(const Words& hyp, const Words& ref) {
    std::vector<long> link(hyp.size(), -1);
    std::vector<bool> used(ref.size(), false);
    auto stage = [&](auto&& same) {
        long prev = -2;
        for (std::size_t i = 0; i < hyp.size(); ++i) {
            if (link[i] >= 0) {
                prev = link[i];
                continue;
            }
            long pick = -1;
            // Prefer the reference slot that continues the current chunk.
            if (prev >= -1 && prev + 1 < static_cast<long>(ref.size()) && !used[prev + 1] && same(hyp[i], ref[prev + 1])) {
                pick = prev + 1;
            } else {
                for (std::size_t j = 0; j < ref.size(); ++j)
                    if (!used[j] && same(hyp[i], ref[j])) {
                        pick = static_cast<long>(j);
                        break;
                    }
            }
            if (pick >= 0) {
                link[i] = pick;
                used[static_cast<std::size_t>(pick)] = true;
            }
            prev = pick >= 0 ? pick : -2;
        }
    };
    stage([](const std::string& a, const std::string& b) { return a == b; });
    stage([](const std::string& a, const std::string& b) { return porter_stem(a) == porter_stem(b); });

    MeteorAlignment out;
    long prev_hyp = -2, prev_ref = -2;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
        if (link[i] < 0) continue;
        ++out.matches;
        if (!(static_cast<long>(i) == prev_hyp + 1 && link[i] == prev_ref + 1)) ++out.chunks;
        prev_hyp = static_cast<long>(i);
        prev_ref = link[i];
    }
    return out;
}

double meteor_pair(const Words& hyp, const std::vector<Words>& refs, const MeteorParams& params) {
    double best = 0;
    for (const auto& ref : refs) {
        const MeteorAlignment a = meteor_align(hyp, ref);
        if (a.matches == 0) continue;
        const double m = static_cast<double>(a.matches);
        const double p = m / static_cast<double>(hyp.size());
        const double r = m / static_cast<double>(ref.size());
        const double fmean = p * r / (params.alpha * p + (1 - params.alpha) * r);
        const double penalty = params.gamma * std::pow(static_cast<double>(a.chunks) / m, params.beta);
        best = std::max(best, fmean * (1 - penalty));
    }
    return best;
}

double meteor(std::span<const EvalPair> pairs, const MeteorParams& params) {
    require_corpus(pairs, "METEOR");
    double sum = 0;
    for (const auto& p : pairs) sum += meteor_pair(p.hypothesis, p.references, params);
    return sum / static_cast<double>(pairs.size());
}

double cider(std::span<const EvalPair> pairs) {
    require_corpus(pairs, "CIDEr");
    constexpr std::size_t kOrders = 4;
    // Document frequency: number of images whose references contain the n-gram.
    std::map<Words, double> df;
    for (const auto& p : pairs) {
        std::set<Words> seen;
        for (const auto& ref : p.references)
            for (std::size_t n = 1; n <= kOrders; ++n)
                for (const auto& [g, _] : ngrams(ref, n)) seen.insert(g);
        for (const auto& g : seen) df[g] += 1.0;
    }
    const double log_n = std::log(static_cast<double>(pairs.size()));

    struct Vec {
        std::array<std::map<Words, double>, kOrders> w;
        std::array<double, kOrders> norm{};
        double length = 0;
    };
    auto vectorize = [&](const Words& words) {
        Vec v;
        v.length = static_cast<double>(words.size());
        for (std::size_t n = 1; n <= kOrders; ++n) {
            for (const auto& [g, cnt] : ngrams(words, n)) {
                auto it = df.find(g);
                const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
                const double val = static_cast<double>(cnt) * (log_n - d);
                v.w[n - 1][g] = val;
                v.norm[n - 1] += val * val;
            }
            v.norm[n - 1] = std::sqrt(v.norm[n - 1]);
        }
        return v;
    };
    auto sim = [&](const Vec& h, const Vec& r) {
        const double delta = h.length - r.length;
        std::array<double, kOrders> out{};
        for (std::size_t n = 0; n < kOrders; ++n) {
            double val = 0;
            for (const auto& [g, hv] : h.w[n]) {
                auto it = r.w[n].find(g);
                if (it != r.w[n].end()) val += std::min(hv, it->second) * it->second;
            }
            if (h.norm[n] != 0 && r.norm[n] != 0) val /= h.norm[n] * r.norm[n];
            out[n] = val * std::exp(-(delta * delta) / (2 * kCiderSigma * kCiderSigma));
        }
        return out;
    };

    double total = 0;
    for (const auto& p : pairs) {
        const Vec h = vectorize(p.hypothesis);
        double score = 0;
        for (const auto& ref : p.references) {
            const auto s = sim(h, vectorize(ref));
            for (double x : s) score += x / kOrders;
        }
        total += score / static_cast<double>(p.references.size()) * 10.0;
    }
    return total / static_cast<double>(pairs.size());
}

MetricVector evaluate_corpus(std::span<const EvalPair> pairs) {
    require_corpus(pairs, "evaluation");
    if (std::all_of(pairs.begin(), pairs.end(), [](const EvalPair& p) { return p.hypothesis.empty(); })) {
        spdlog::warn("every hypothesis is empty; all scores are zero");
    }
    MetricVector m;
    m.bleu1 = bleu(pairs, 1);
    m.bleu2 = bleu(pairs, 2);
    m.bleu3 = bleu(pairs, 3);
    m.bleu4 = bleu(pairs, 4);
    m.meteor = meteor(pairs);
    m.rouge_l = rouge_l(pairs);
    m.cider = cider(pairs);
    return m;
}

}  // namespace rsic::metrics
