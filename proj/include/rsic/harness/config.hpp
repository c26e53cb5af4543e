#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "rsic/generation/generation.hpp"
#include "rsic/model/caption_model.hpp"

namespace rsic::harness {

// Per-dataset tokenizer and evaluation constants.
struct DatasetPreset {
    std::string name;
    std::size_t vocab_size;
    std::size_t max_len;
    std::size_t num_classes;
    std::size_t test_size;
};
std::optional<DatasetPreset> dataset_preset(const std::string& name);  // SYDNEY, UCM, RSICD

struct ExperimentConfig {
    // [data]
    std::filesystem::path dataset;           // root holding imgs/; relative paths resolve under RSIC_DATA_ROOT
    std::string manifest = "dataset.json";  // relative to the root
    std::string dataset_name;               // defaults to the root's directory name
    std::size_t image_size = 224;

    model::EncoderConfig encoder;
    model::DecoderConfig decoder;  // vocab_size / max_len 0 = dataset preset or corpus-derived
    generation::GenerationConfig generation;

    // [train]
    double learn_rate = 1e-4;
    std::size_t batch = 64;
    std::size_t max_epochs = 64;
    std::size_t patience = 10;
    double warmup_frac = 0.10;
    double clip_norm = 1.0;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;

    void validate() const;  // ConfigError
    std::filesystem::path dataset_root() const;
    std::string resolved_dataset_name() const;
};

ExperimentConfig load_config(const std::filesystem::path& ini);
void save_config(const std::filesystem::path& ini, const ExperimentConfig& cfg);
// Applies "section.key=value" overrides, same keys as the INI file.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

// Key order fixed, numbers printed exactly.
nlohmann::json canonical_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
// 16 hex digits of FNV-1a 64 over the canonical JSON text.
std::string config_hash(const ExperimentConfig& cfg);

// Encoder abbreviations for cell names, e.g. convnext -> C, wide_resnet -> WR.
std::string encoder_abbreviation(const std::string& backbone);
// "C-MHT-G": encoder, orientation (ablation), search.
std::string cell_name(const std::string& backbone, model::Ablation ablation, generation::Strategy search);

}  // namespace rsic::harness
