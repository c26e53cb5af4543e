#include "rsic/corpus/dataset.hpp"

#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace rsic::corpus {

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train:
            return "train";
        case Split::val:
            return "val";
        case Split::test:
            return "test";
    }
    return "train";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    throw FormatError("unknown split \"" + std::string(text) + "\" (expected train, val or test)");
}

const std::vector<CaptionRecord>& Dataset::split(Split s) const {
    switch (s) {
        case Split::train:
            return train;
        case Split::val:
            return val;
        case Split::test:
            return test;
    }
    return train;
}

std::string category_from_filename(const std::string& filename) {
    const std::string stem = std::filesystem::path(filename).stem().string();
    std::string out;
    for (char c : stem) {
        if (c == '_' || std::isdigit(static_cast<unsigned char>(c))) break;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

Dataset load_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw DatasetError("cannot open manifest " + manifest.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("manifest " + manifest.string() + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array()) {
        throw FormatError("manifest " + manifest.string() + " lacks an \"images\" array");
    }
    const auto& images = doc["images"];
    if (images.empty()) throw DatasetError("empty dataset");

    Dataset ds;
    ds.name = doc.value("dataset", manifest.stem().string());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& img = images[i];
        if (!img.contains("filename") || !img["filename"].is_string()) {
            throw FormatError("image entry " + std::to_string(i) + " has no filename");
        }
        CaptionRecord rec;
        const std::string filename = img["filename"].get<std::string>();
        rec.image_id = filename;
        if (img.contains("imgid")) {
            rec.image_id = img["imgid"].is_string() ? img["imgid"].get<std::string>() : img["imgid"].dump();
        }
        rec.image_path = root / "imgs" / filename;
        if (!img.contains("split") || !img["split"].is_string()) {
            throw FormatError("record " + filename + " has no split");
        }
        rec.split = parse_split(img["split"].get<std::string>());
        for (const auto& sent : img.value("sentences", nlohmann::json::array())) {
            if (!sent.contains("raw") || !sent["raw"].is_string()) {
                throw FormatError("record " + filename + " has a sentence without \"raw\" text");
            }
            rec.references.push_back(sent["raw"].get<std::string>());
        }
        if (rec.references.empty() || rec.references.size() > 5) {
            throw FormatError("record " + filename + " must carry 1..5 reference captions, found " +
                              std::to_string(rec.references.size()));
        }
        rec.category = img.contains("class") ? img["class"].get<std::string>() : category_from_filename(filename);
        if (!std::filesystem::exists(rec.image_path)) {
            throw DatasetError("record " + rec.image_id + ": image file not found at " + rec.image_path.string());
        }
        switch (rec.split) {
            case Split::train:
                ds.train.push_back(std::move(rec));
                break;
            case Split::val:
                ds.val.push_back(std::move(rec));
                break;
            case Split::test:
                ds.test.push_back(std::move(rec));
                break;
        }
    }
    spdlog::info("loaded {}: {} train / {} val / {} test records", ds.name, ds.train.size(), ds.val.size(),
                 ds.test.size());
    return ds;
}

std::string normalize_caption(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char c : raw) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isspace(uc)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(uc)));
    }
    while (!out.empty() && (std::ispunct(static_cast<unsigned char>(out.back())) || out.back() == ' ')) out.pop_back();
    return out;
}

std::vector<std::string> normalized_captions(const std::vector<CaptionRecord>& records) {
    std::vector<std::string> out;
    for (const auto& r : records)
        for (const auto& ref : r.references) out.push_back(normalize_caption(ref));
    return out;
}

}  // namespace rsic::corpus
