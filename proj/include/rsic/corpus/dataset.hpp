#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rsic::corpus {

enum class Split { train, val, test };

std::string_view to_string(Split split);
// Throws FormatError for anything other than "train", "val" or "test".
Split parse_split(std::string_view text);

struct CaptionRecord {
    std::string image_id;
    std::filesystem::path image_path;
    Split split = Split::train;
    std::vector<std::string> references;
    // Scene category used by the classification probe; empty when unknown.
    std::string category;
};

struct Dataset {
    std::string name;
    std::vector<CaptionRecord> train;
    std::vector<CaptionRecord> val;
    std::vector<CaptionRecord> test;

    const std::vector<CaptionRecord>& split(Split s) const;
    std::size_t size() const { return train.size() + val.size() + test.size(); }
};

class DatasetError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class FormatError : public DatasetError {
  public:
    using DatasetError::DatasetError;
};

// Reads the captioning manifest
//   {"images": [{"filename": str, "split": "train"|"val"|"test", "sentences": [{"raw": str}, ...]}]}
// with image files under root/imgs/. Optional per-image keys: "imgid" (image id,
// defaults to the filename) and "class" (scene category; defaults to the filename
// stem up to its first '_' or digit). Record order follows the manifest.
Dataset load_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest);

// Lowercase, collapse whitespace runs to one space, trim, and drop trailing punctuation.
std::string normalize_caption(std::string_view raw);

// Every reference caption of `records`, normalized.
std::vector<std::string> normalized_captions(const std::vector<CaptionRecord>& records);

std::string category_from_filename(const std::string& filename);

}  // namespace rsic::corpus
