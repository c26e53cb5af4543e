#include "rsic/corpus/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace rsic::corpus {

namespace {

const std::array<std::string, Vocabulary::kSpecials> kSpecialNames = {"<s>", "<pad>", "</s>", "<unk>"};

// GPT-2 style printable stand-ins for every byte, used only for the JSON file.
const std::array<std::string, 256>& byte_to_printable() {
    static const std::array<std::string, 256> table = [] {
        std::array<std::string, 256> t;
        auto utf8 = [](unsigned cp) {
            std::string s;
            if (cp < 0x80) {
                s.push_back(static_cast<char>(cp));
            } else {
                s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
                s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
            }
            return s;
        };
        unsigned extra = 0;
        for (unsigned b = 0; b < 256; ++b) {
            const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
            t[b] = utf8(printable ? b : 256 + extra++);
        }
        return t;
    }();
    return table;
}

std::string to_printable(const std::string& raw) {
    std::string out;
    for (unsigned char c : raw) out += byte_to_printable()[c];
    return out;
}

std::string from_printable(const std::string& text) {
    static const std::map<std::string, char> reverse = [] {
        std::map<std::string, char> r;
        for (unsigned b = 0; b < 256; ++b) r.emplace(byte_to_printable()[b], static_cast<char>(b));
        return r;
    }();
    std::string out;
    for (std::size_t i = 0; i < text.size();) {
        const std::size_t len = (static_cast<unsigned char>(text[i]) < 0x80) ? 1 : 2;
        auto it = reverse.find(text.substr(i, len));
        if (it == reverse.end()) throw std::runtime_error("tokenizer file holds a non byte-level symbol: " + text);
        out.push_back(it->second);
        i += len;
    }
    return out;
}

enum class CharClass { space, letter, digit, other };

CharClass classify(char c) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) return CharClass::space;
    if (std::isalpha(uc) || uc >= 0x80) return CharClass::letter;
    if (std::isdigit(uc)) return CharClass::digit;
    return CharClass::other;
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        std::size_t start = i;
        if (classify(text[i]) == CharClass::space) {
            std::size_t j = i;
            while (j < n && classify(text[j]) == CharClass::space) ++j;
            if (j == n || text[j - 1] != ' ') {
                out.emplace_back(text.substr(i, j - i));
                i = j;
                continue;
            }
            // The final space of the run prefixes the next word.
            if (j - 1 > i) out.emplace_back(text.substr(i, j - 1 - i));
            start = j - 1;
            i = j;
        }
        const CharClass cls = classify(text[i]);
        while (i < n && classify(text[i]) == cls) ++i;
        out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

Vocabulary::Vocabulary() {
    for (std::size_t s = 0; s < kSpecials; ++s) {
        token_to_id_.emplace(kSpecialNames[s], static_cast<TokenId>(id_to_token_.size()));
        id_to_token_.push_back(kSpecialNames[s]);
    }
    for (unsigned b = 0; b < kByteAlphabet; ++b) {
        std::string tok(1, static_cast<char>(b));
        token_to_id_.emplace(tok, static_cast<TokenId>(id_to_token_.size()));
        id_to_token_.push_back(tok);
    }
}

TokenId Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(TokenId id) const {
    if (!contains(id)) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocabulary::add_merge(const std::string& left, const std::string& right) {
    const std::string merged = left + right;
    merge_rank_.emplace(std::make_pair(left, right), merges_.size());
    merges_.emplace_back(left, right);
    if (token_to_id_.emplace(merged, static_cast<TokenId>(id_to_token_.size())).second) id_to_token_.push_back(merged);
}

std::vector<std::string> Vocabulary::bpe(const std::string& word) const {
    std::vector<std::string> symbols;
    symbols.reserve(word.size());
    for (char c : word) symbols.emplace_back(1, c);
    while (symbols.size() > 1) {
        std::size_t best_rank = merges_.size();
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
            if (it != merge_rank_.end()) best_rank = std::min(best_rank, it->second);
        }
        if (best_rank == merges_.size()) break;
        const auto& [left, right] = merges_[best_rank];
        std::vector<std::string> next;
        next.reserve(symbols.size());
        for (std::size_t i = 0; i < symbols.size();) {
            if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
                next.push_back(left + right);
                i += 2;
            } else {
                next.push_back(std::move(symbols[i]));
                ++i;
            }
        }
        symbols = std::move(next);
    }
    return symbols;
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
    std::vector<TokenId> out;
    for (const std::string& word : pretokenize(text))
        for (const std::string& sym : bpe(word)) out.push_back(id_of(sym));
    return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json doc;
    doc["type"] = "byte_level_bpe";
    doc["special"] = {{"start", kSpecialNames[kStart]},
                      {"pad", kSpecialNames[kPad]},
                      {"end", kSpecialNames[kEnd]},
                      {"unk", kSpecialNames[kUnk]}};
    auto merges = nlohmann::ordered_json::array();
    for (const auto& [l, r] : merges_) merges.push_back({to_printable(l), to_printable(r)});
    doc["merges"] = std::move(merges);
    nlohmann::ordered_json vocab = nlohmann::ordered_json::object();
    for (std::size_t id = 0; id < id_to_token_.size(); ++id) {
        const std::string key = id < kSpecials ? id_to_token_[id] : to_printable(id_to_token_[id]);
        vocab[key] = id;
    }
    doc["vocab"] = std::move(vocab);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write tokenizer file " + path.string());
    os << doc.dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read tokenizer file " + path.string());
    nlohmann::json doc;
    in >> doc;
    Vocabulary v;
    for (const auto& pair : doc.at("merges")) {
        v.add_merge(from_printable(pair.at(0).get<std::string>()), from_printable(pair.at(1).get<std::string>()));
    }
    if (doc.contains("vocab") && doc["vocab"].size() != v.size()) {
        throw std::runtime_error("tokenizer file " + path.string() + " vocab size disagrees with its merges");
    }
    return v;
}

Vocabulary train_tokenizer(std::span<const std::string> captions, std::size_t target_vocab, std::size_t min_frequency) {
    if (captions.empty()) throw std::invalid_argument("cannot train a tokenizer on an empty corpus");
    constexpr std::size_t base = Vocabulary::kSpecials + Vocabulary::kByteAlphabet;
    if (target_vocab < base) {
        throw std::invalid_argument("target vocabulary " + std::to_string(target_vocab) + " is below the " +
                                    std::to_string(base) + " base symbols");
    }
    std::map<std::string, std::size_t> word_freq;
    for (const auto& c : captions)
        for (auto& w : pretokenize(c)) ++word_freq[w];

    struct Word {
        std::vector<std::string> symbols;
        std::size_t freq;
    };
    std::vector<Word> words;
    for (const auto& [w, f] : word_freq) {
        Word word{{}, f};
        for (char c : w) word.symbols.emplace_back(1, c);
        words.push_back(std::move(word));
    }

    Vocabulary v;
    std::map<std::pair<std::string, std::string>, std::size_t> counts;
    while (v.size() < target_vocab) {
        counts.clear();
        for (const Word& w : words)
            for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) counts[{w.symbols[i], w.symbols[i + 1]}] += w.freq;
        // Highest count wins; std::map order makes the lexicographically smallest pair win ties.
        const std::pair<std::string, std::string>* best = nullptr;
        std::size_t best_count = 0;
        for (const auto& [pair, count] : counts) {
            if (count > best_count && !v.token_to_id_.count(pair.first + pair.second)) {
                best = &pair;
                best_count = count;
            }
        }
        if (!best || best_count < min_frequency) break;
        const auto [left, right] = *best;
        v.add_merge(left, right);
        for (Word& w : words) {
            std::vector<std::string> next;
            next.reserve(w.symbols.size());
            for (std::size_t i = 0; i < w.symbols.size();) {
                if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
                    next.push_back(left + right);
                    i += 2;
                } else {
                    next.push_back(std::move(w.symbols[i]));
                    ++i;
                }
            }
            w.symbols = std::move(next);
        }
    }
    if (v.size() < target_vocab) {
        spdlog::warn("tokenizer corpus supports only {} tokens (target {})", v.size(), target_vocab);
    }
    return v;
}

std::size_t TokenSequence::length() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

TokenSequence encode_caption(const Vocabulary& v, std::string_view text, std::size_t max_len) {
    if (max_len < 3) throw std::invalid_argument("max_len must be at least 3");
    TokenSequence seq;
    seq.max_len = max_len;
    seq.ids.push_back(v.start_id());
    for (TokenId id : v.tokenize(text)) seq.ids.push_back(id);
    if (seq.ids.size() + 1 > max_len) seq.ids.resize(max_len - 1);
    seq.ids.push_back(v.end_id());
    seq.mask.assign(seq.ids.size(), 1);
    seq.ids.resize(max_len, v.pad_id());
    seq.mask.resize(max_len, 0);
    return seq;
}

std::string decode_tokens(const Vocabulary& v, std::span<const TokenId> ids) {
    std::string out;
    for (TokenId id : ids) {
        if (!v.contains(id)) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
        if (id == v.end_id()) break;
        if (v.is_special(id)) continue;
        out += v.token_of(id);
    }
    return out;
}

TokenBatch pad_batch(std::span<const TokenSequence> seqs, TokenId pad_id) {
    if (seqs.empty()) throw std::invalid_argument("pad_batch needs at least one sequence");
    TokenBatch batch;
    batch.rows = seqs.size();
    for (const auto& s : seqs) batch.cols = std::max(batch.cols, s.ids.size());
    batch.ids.assign(batch.rows * batch.cols, pad_id);
    batch.mask.assign(batch.rows * batch.cols, 0);
    for (std::size_t r = 0; r < seqs.size(); ++r) {
        std::copy(seqs[r].ids.begin(), seqs[r].ids.end(), batch.ids.begin() + static_cast<std::ptrdiff_t>(r * batch.cols));
        std::copy(seqs[r].mask.begin(), seqs[r].mask.end(), batch.mask.begin() + static_cast<std::ptrdiff_t>(r * batch.cols));
    }
    return batch;
}

std::size_t longest_encoding(const Vocabulary& v, std::span<const std::string> captions) {
    std::size_t longest = 2;
    for (const auto& c : captions) longest = std::max(longest, v.tokenize(c).size() + 2);
    return longest;
}

}  // namespace rsic::corpus
