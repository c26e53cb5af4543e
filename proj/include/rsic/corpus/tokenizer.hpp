#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rsic::corpus {

using TokenId = std::int32_t;

// Byte-level BPE vocabulary: four specials, the 256 single-byte tokens, then
// one token per learned merge. Tokens are raw byte strings internally.
class Vocabulary {
  public:
    static constexpr TokenId kStart = 0;
    static constexpr TokenId kPad = 1;
    static constexpr TokenId kEnd = 2;
    static constexpr TokenId kUnk = 3;
    static constexpr std::size_t kSpecials = 4;
    static constexpr std::size_t kByteAlphabet = 256;

    Vocabulary();

    TokenId start_id() const { return kStart; }
    TokenId end_id() const { return kEnd; }
    TokenId pad_id() const { return kPad; }
    TokenId unk_id() const { return kUnk; }
    std::size_t size() const { return id_to_token_.size(); }
    bool is_special(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < kSpecials; }

    TokenId id_of(const std::string& token) const;
    const std::string& token_of(TokenId id) const;
    bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < id_to_token_.size(); }

    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
    const std::unordered_map<std::string, TokenId>& token_to_id() const { return token_to_id_; }
    const std::vector<std::string>& id_to_token() const { return id_to_token_; }

    // Subword ids of `text` without start/end markers.
    std::vector<TokenId> tokenize(std::string_view text) const;

    // JSON file: {"merges": [[a, b], ...], "vocab": {token: id}, "special": {...}}; byte
    // tokens are stored through the printable byte-to-unicode table.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    friend Vocabulary train_tokenizer(std::span<const std::string>, std::size_t, std::size_t);

  private:
    void add_merge(const std::string& left, const std::string& right);
    std::vector<std::string> bpe(const std::string& word) const;

    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::string> id_to_token_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
};

// Splits text into words: runs of letters, digits or other symbols, each
// carrying at most one leading space; whitespace not followed by a word stays
// on its own. Concatenating the pieces gives back `text`.
std::vector<std::string> pretokenize(std::string_view text);

// Learns merges from `captions` until the vocabulary reaches `target_vocab` or no
// pair occurs at least `min_frequency` times. Throws on an empty corpus or a target
// below specials + byte alphabet.
Vocabulary train_tokenizer(std::span<const std::string> captions, std::size_t target_vocab,
                           std::size_t min_frequency = 2);

struct TokenSequence {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> mask;  // 1 = real token
    std::size_t max_len = 0;

    std::size_t length() const;  // number of real tokens
};

// [start] + subwords + [end], hard-truncated to max_len with end forced last,
// then padded to max_len.
TokenSequence encode_caption(const Vocabulary& v, std::string_view text, std::size_t max_len);

// Stops at the first end id, skips specials, joins the byte tokens. Throws on ids
// outside the vocabulary.
std::string decode_tokens(const Vocabulary& v, std::span<const TokenId> ids);

struct TokenBatch {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<TokenId> ids;  // row-major rows x cols
    std::vector<std::uint8_t> mask;

    TokenId id(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
    bool real(std::size_t r, std::size_t c) const { return mask[r * cols + c] != 0; }
};

TokenBatch pad_batch(std::span<const TokenSequence> seqs, TokenId pad_id);

// Longest encoded length (start and end included) over `captions`.
std::size_t longest_encoding(const Vocabulary& v, std::span<const std::string> captions);

}  // namespace rsic::corpus
