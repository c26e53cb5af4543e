#include "rsic/annotation/store.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace rsic::annotation {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Judgement j) {
    switch (j) {
        case Judgement::related:
            return "related";
        case Judgement::partially_related:
            return "partially_related";
        case Judgement::unrelated:
            return "unrelated";
    }
    return "?";
}

Judgement parse_judgement(const std::string& text) {
    if (text == "related") return Judgement::related;
    if (text == "partially_related") return Judgement::partially_related;
    if (text == "unrelated") return Judgement::unrelated;
    throw AnnotationError("label must be related, partially_related or unrelated, got \"" + text + "\"");
}

json to_json(const AnnotationItem& item, bool with_references) {
    json j{{"item_id", item.item_id},
           {"image_path", item.image_path},
           {"caption", item.caption},
           {"encoder", item.encoder},
           {"search", item.search}};
    if (with_references) j["references"] = item.references;
    return j;
}

AnnotationItem item_from_json(const json& j) {
    if (!j.is_object()) throw AnnotationError("item must be an object");
    AnnotationItem it;
    try {
        it.item_id = j.at("item_id").get<std::string>();
        it.image_path = j.value("image_path", std::string{});
        it.caption = j.at("caption").get<std::string>();
        it.encoder = j.at("encoder").get<std::string>();
        it.search = j.at("search").get<std::string>();
        if (j.contains("references")) it.references = j.at("references").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw AnnotationError(std::string("bad item: ") + e.what());
    }
    if (it.item_id.empty()) throw AnnotationError("item_id must not be empty");
    if (it.search != "greedy" && it.search != "beam") throw AnnotationError("item " + it.item_id + ": search must be greedy or beam");
    return it;
}

double round2(double pct) { return std::round(pct * 100.0) / 100.0; }

json to_json(const SubjectiveReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"encoder", row.encoder},
                        {"search", row.search},
                        {"related", row.counts[0]},
                        {"partially_related", row.counts[1]},
                        {"unrelated", row.counts[2]},
                        {"labeled", row.labeled},
                        {"total", row.total},
                        {"rel_pct", row.pct[0]},
                        {"part_rel_pct", row.pct[1]},
                        {"unrel_pct", row.pct[2]}});
    }
    return {{"rows", rows}, {"notes", r.notes}};
}

SubjectiveReport aggregate(const std::vector<AnnotationItem>& items, const std::vector<AnnotationLabel>& history) {
    std::map<std::pair<std::string, std::string>, Judgement> latest;  // (item, annotator)
    for (const auto& l : history) latest[{l.item_id, l.annotator}] = l.label;

    std::map<std::pair<std::string, std::string>, ReportRow> groups;  // (search, encoder)
    std::map<std::string, const AnnotationItem*> by_id;
    for (const auto& it : items) {
        by_id[it.item_id] = &it;
        auto& row = groups[{it.search, it.encoder}];
        row.search = it.search;
        row.encoder = it.encoder;
        ++row.total;
    }
    for (const auto& [key, label] : latest) {
        auto found = by_id.find(key.first);
        if (found == by_id.end()) continue;
        auto& row = groups[{found->second->search, found->second->encoder}];
        ++row.counts[static_cast<std::size_t>(label)];
        ++row.labeled;
    }
    SubjectiveReport r;
    for (auto& [key, row] : groups) {
        if (row.labeled == 0) {
            r.notes.push_back(row.encoder + " / " + row.search + ": no labels yet, omitted");
            continue;
        }
        for (std::size_t k = 0; k < 3; ++k)
            row.pct[k] = round2(100.0 * static_cast<double>(row.counts[k]) / static_cast<double>(row.labeled));
        r.rows.push_back(row);
    }
    return r;
}

namespace {

std::string now_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    return json::parse(in);
}

bool valid_session_name(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-'; });
}

}  // namespace

SessionStore::SessionStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path SessionStore::session_dir(const std::string& session) const {
    const fs::path p = dir_ / session;
    if (!valid_session_name(session) || !fs::exists(p / "session.json")) throw UnknownSession("unknown session " + session);
    return p;
}

std::string SessionStore::create_session(const std::vector<AnnotationItem>& items, std::optional<std::uint64_t> seed) {
    if (items.empty()) throw AnnotationError("a session needs at least one item");
    std::set<std::string> ids;
    for (const auto& it : items) {
        if (it.item_id.empty()) throw AnnotationError("item_id must not be empty");
        if (!ids.insert(it.item_id).second) throw AnnotationError("duplicate item_id " + it.item_id);
        if (it.search != "greedy" && it.search != "beam") throw AnnotationError("item " + it.item_id + ": search must be greedy or beam");
    }
    const std::uint64_t s = seed ? *seed : (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
    std::vector<AnnotationItem> order = items;
    std::mt19937_64 rng(s);
    std::shuffle(order.begin(), order.end(), rng);

    std::uint64_t h = 0xcbf29ce484222325ULL ^ s;
    for (const auto& it : items)
        for (char c : it.item_id) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;

    std::lock_guard lock(mutex_);
    std::string id = hex64(h);
    for (int k = 2; fs::exists(dir_ / id); ++k) id = hex64(h) + "-" + std::to_string(k);
    const fs::path d = dir_ / id;
    fs::create_directories(d);
    json items_json = json::array();
    for (const auto& it : order) items_json.push_back(to_json(it));
    const json header{{"session_id", id}, {"seed", s}, {"created", now_utc()}, {"items", items_json}};
    {
        std::ofstream out(d / "session.json.tmp");
        out << header.dump(2) << '\n';
        if (!out) throw std::runtime_error("cannot write session " + id);
    }
    fs::rename(d / "session.json.tmp", d / "session.json");
    std::ofstream(d / "labels.jsonl", std::ios::app);
    spdlog::info("created session {} with {} items (seed {})", id, order.size(), s);
    return id;
}

std::vector<AnnotationItem> SessionStore::items(const std::string& session) const {
    const json h = read_json(session_dir(session) / "session.json");
    std::vector<AnnotationItem> out;
    for (const auto& j : h.at("items")) out.push_back(item_from_json(j));
    return out;
}

std::uint64_t SessionStore::seed(const std::string& session) const {
    return read_json(session_dir(session) / "session.json").at("seed").get<std::uint64_t>();
}

std::vector<AnnotationLabel> SessionStore::history(const std::string& session) const {
    std::ifstream in(session_dir(session) / "labels.jsonl");
    std::vector<AnnotationLabel> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            out.push_back({j.at("item_id"), parse_judgement(j.at("label")), j.at("annotator"), j.at("timestamp")});
        } catch (const std::exception& e) {
            // A torn final line after a crash is dropped; anything else is corruption.
            if (in.peek() == EOF) {
                spdlog::warn("session {}: ignoring incomplete last log line", session);
                break;
            }
            throw std::runtime_error("session " + session + " log line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

NextItem SessionStore::next_item(const std::string& session, const std::string& annotator) const {
    std::lock_guard lock(mutex_);
    const auto all = items(session);
    std::set<std::string> done;
    for (const auto& l : history(session))
        if (l.annotator == annotator) done.insert(l.item_id);
    NextItem n;
    n.total = all.size();
    for (const auto& it : all) {
        if (done.count(it.item_id)) {
            ++n.labeled;
        } else if (!n.item) {
            n.item = it;
        }
    }
    return n;
}

void SessionStore::submit_label(const std::string& session, AnnotationLabel label) {
    std::lock_guard lock(mutex_);
    const fs::path d = session_dir(session);
    const auto all = items(session);
    if (std::none_of(all.begin(), all.end(), [&](const AnnotationItem& it) { return it.item_id == label.item_id; }))
        throw AnnotationError("session " + session + " has no item " + label.item_id);
    if (label.annotator.empty()) throw AnnotationError("annotator must not be empty");
    if (label.timestamp.empty()) label.timestamp = now_utc();
    std::ofstream out(d / "labels.jsonl", std::ios::app);
    out << json{{"item_id", label.item_id},
                {"label", to_string(label.label)},
                {"annotator", label.annotator},
                {"timestamp", label.timestamp}}
               .dump()
        << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot append to session " + session);
}

SubjectiveReport SessionStore::report(const std::string& session) const {
    std::lock_guard lock(mutex_);
    SubjectiveReport r = aggregate(items(session), history(session));
    if (r.rows.empty() && r.notes.empty()) r.notes.push_back("no labels yet");
    return r;
}

std::vector<std::string> SessionStore::sessions() const {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir_))
        if (e.is_directory() && fs::exists(e.path() / "session.json")) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

std::optional<fs::path> SessionStore::image_path(const std::string& item_id, const std::string& session) const {
    const std::vector<std::string> where = session.empty() ? sessions() : std::vector<std::string>{session};
    for (const auto& s : where)
        for (const auto& it : items(s))
            if (it.item_id == item_id && !it.image_path.empty()) return fs::path(it.image_path);
    return std::nullopt;
}

}  // namespace rsic::annotation
