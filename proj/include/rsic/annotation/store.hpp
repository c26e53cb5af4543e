#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rsic::annotation {

enum class Judgement { related, partially_related, unrelated };
std::string to_string(Judgement j);
Judgement parse_judgement(const std::string& text);  // AnnotationError

// Bad input from a client (unknown item, invalid label, ...).
struct AnnotationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct UnknownSession : AnnotationError {
    using AnnotationError::AnnotationError;
};

struct AnnotationItem {
    std::string item_id;
    std::string image_path;
    std::string caption;
    std::string encoder;
    std::string search;  // greedy | beam
    std::vector<std::string> references;
};
nlohmann::json to_json(const AnnotationItem& item, bool with_references = true);
AnnotationItem item_from_json(const nlohmann::json& j);

struct AnnotationLabel {
    std::string item_id;
    Judgement label = Judgement::related;
    std::string annotator;
    std::string timestamp;  // ISO-8601 UTC; filled on submit when empty
};

struct NextItem {
    std::optional<AnnotationItem> item;  // empty when done
    std::size_t labeled = 0;
    std::size_t total = 0;
};

struct ReportRow {
    std::string encoder;
    std::string search;
    std::array<std::size_t, 3> counts{};  // related, partially_related, unrelated
    std::size_t labeled = 0;
    std::size_t total = 0;
    std::array<double, 3> pct{};  // rounded to 2 decimals
};

struct SubjectiveReport {
    std::vector<ReportRow> rows;  // sorted by search, then encoder
    std::vector<std::string> notes;
};
nlohmann::json to_json(const SubjectiveReport& r);

double round2(double pct);

// One directory per session: session.json (items in their shuffled order plus
// the seed) and labels.jsonl, an append-only log of label events.
class SessionStore {
  public:
    explicit SessionStore(std::filesystem::path dir);

    std::string create_session(const std::vector<AnnotationItem>& items, std::optional<std::uint64_t> seed = {});
    std::vector<AnnotationItem> items(const std::string& session) const;
    std::uint64_t seed(const std::string& session) const;
    NextItem next_item(const std::string& session, const std::string& annotator) const;
    void submit_label(const std::string& session, AnnotationLabel label);
    std::vector<AnnotationLabel> history(const std::string& session) const;
    SubjectiveReport report(const std::string& session) const;
    std::vector<std::string> sessions() const;
    // Image of an item; searches every session when none is named.
    std::optional<std::filesystem::path> image_path(const std::string& item_id, const std::string& session = {}) const;

    const std::filesystem::path& dir() const { return dir_; }

  private:
    std::filesystem::path session_dir(const std::string& session) const;

    std::filesystem::path dir_;
    mutable std::mutex mutex_;
};

// Report from items and a label history; latest label per (item, annotator) wins.
SubjectiveReport aggregate(const std::vector<AnnotationItem>& items, const std::vector<AnnotationLabel>& history);

}  // namespace rsic::annotation
