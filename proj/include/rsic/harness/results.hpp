#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rsic/corpus/dataset.hpp"
#include "rsic/harness/config.hpp"
#include "rsic/metrics/metrics.hpp"
#include "rsic/ranking/ranking.hpp"

namespace rsic::harness {

struct ResultRow {
    std::string encoder;  // backbone name
    model::Ablation ablation = model::Ablation::MHT;
    generation::Strategy search = generation::Strategy::greedy;
    metrics::MetricVector scores;

    std::string cell() const { return cell_name(encoder, ablation, search); }
    friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct ResultsTable {
    std::string dataset;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<ResultRow> rows;

    friend bool operator==(const ResultsTable&, const ResultsTable&) = default;
};

// Columns: dataset,seed,config_hash,cell,encoder,ablation,search,bleu1..cider.
// Numbers use %.17g so reading back gives the same doubles.
void export_csv(const std::filesystem::path& path, const ResultsTable& t);
void export_json(const std::filesystem::path& path, const ResultsTable& t);
ResultsTable read_results_csv(const std::filesystem::path& path);
nlohmann::json to_json(const ResultsTable& t);

struct ExperimentPlan {
    ExperimentConfig base;
    std::vector<model::BackboneSpec> encoders;
    std::vector<model::Ablation> ablations = {model::Ablation::MHT};
    std::vector<generation::Strategy> searches = {generation::Strategy::greedy, generation::Strategy::beam};
    std::filesystem::path work_dir;
    bool train_missing = true;  // otherwise cells without a checkpoint are skipped
    corpus::Split split = corpus::Split::test;
};

struct ExperimentOutcome {
    ResultsTable table;
    // Ranking per search slice; present only for slices with >= 3 encoders.
    std::map<std::string, ranking::ClusterLabeling> rankings;
    std::vector<std::string> skipped;
};

// Trains or reuses work_dir/<cell-without-search>/best per encoder and ablation, then
// scores every search strategy on the chosen split. Writes results.csv, results.json
// and clusters_<search>.json under work_dir.
ExperimentOutcome run_experiment(const ExperimentPlan& plan);

ranking::EncoderScoreTable score_table(const ResultsTable& t, generation::Strategy search,
                                       model::Ablation ablation = model::Ablation::MHT);

}  // namespace rsic::harness
