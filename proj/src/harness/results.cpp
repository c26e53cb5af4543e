#include "rsic/harness/results.hpp"

#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "rsic/harness/train.hpp"
#include "rsic/util/csv.hpp"

namespace rsic::harness {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string>& header() {
    static const std::vector<std::string> h = [] {
        std::vector<std::string> v = {"dataset", "seed", "config_hash", "cell", "encoder", "ablation", "search"};
        for (const char* n : metrics::MetricVector::names()) v.emplace_back(n);
        return v;
    }();
    return h;
}

}  // namespace

void export_csv(const fs::path& path, const ResultsTable& t) {
    if (t.rows.empty()) throw std::invalid_argument("refusing to export an empty results table");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t i = 0; i < header().size(); ++i) out << (i ? "," : "") << header()[i];
    out << '\n';
    for (const auto& r : t.rows) {
        out << util::csv_field(t.dataset) << ',' << t.seed << ',' << t.config_hash << ',' << r.cell() << ','
            << util::csv_field(r.encoder) << ',' << model::to_string(r.ablation) << ',' << generation::to_string(r.search);
        for (double v : r.scores.values()) out << ',' << util::exact_double(v);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

nlohmann::json to_json(const ResultsTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) {
        nlohmann::json scores;
        const auto v = r.scores.values();
        for (std::size_t i = 0; i < v.size(); ++i) scores[metrics::MetricVector::names()[i]] = v[i];
        rows.push_back({{"cell", r.cell()},
                        {"encoder", r.encoder},
                        {"ablation", model::to_string(r.ablation)},
                        {"search", generation::to_string(r.search)},
                        {"scores", scores}});
    }
    return {{"dataset", t.dataset}, {"seed", t.seed}, {"config_hash", t.config_hash}, {"rows", rows}};
}

void export_json(const fs::path& path, const ResultsTable& t) {
    if (t.rows.empty()) throw std::invalid_argument("refusing to export an empty results table");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json(t).dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

ResultsTable read_results_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (util::split_csv_line(line) != header()) throw std::runtime_error(path.string() + ": unexpected header");
    ResultsTable t;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = util::split_csv_line(line);
        if (f.size() != header().size()) throw std::runtime_error(path.string() + ": bad row \"" + line + "\"");
        if (first) {
            t.dataset = f[0];
            t.seed = std::stoull(f[1]);
            t.config_hash = f[2];
            first = false;
        }
        ResultRow r;
        r.encoder = f[4];
        r.ablation = model::parse_ablation(f[5]);
        r.search = generation::parse_strategy(f[6]);
        std::array<double, 7> v{};
        for (std::size_t i = 0; i < 7; ++i) v[i] = std::stod(f[7 + i]);
        r.scores = metrics::MetricVector::from_values(v);
        if (r.cell() != f[3]) throw std::runtime_error(path.string() + ": cell " + f[3] + " does not match its columns");
        t.rows.push_back(r);
    }
    return t;
}

ranking::EncoderScoreTable score_table(const ResultsTable& t, generation::Strategy search, model::Ablation ablation) {
    ranking::EncoderScoreTable s{t.dataset, search, {}};
    for (const auto& r : t.rows)
        if (r.search == search && r.ablation == ablation) s.rows.emplace_back(r.encoder, r.scores);
    return s;
}

ExperimentOutcome run_experiment(const ExperimentPlan& plan) {
    plan.base.validate();
    ExperimentOutcome out;
    out.table.dataset = plan.base.resolved_dataset_name();
    out.table.seed = plan.base.seed;
    out.table.config_hash = config_hash(plan.base);
    fs::create_directories(plan.work_dir);

    const fs::path root = plan.base.dataset_root();
    const corpus::Dataset ds = corpus::load_dataset(root, root / plan.base.manifest);
    const auto& records = ds.split(plan.split);
    if (records.empty()) throw corpus::DatasetError("split " + std::string(corpus::to_string(plan.split)) + " is empty");

    for (const auto& spec : plan.encoders) {
        for (model::Ablation ab : plan.ablations) {
            ExperimentConfig cfg = plan.base;
            cfg.encoder.backbone = spec;
            cfg.encoder.ablation = ab;
            const std::string stem = encoder_abbreviation(spec.name) + "-" + model::to_string(ab);
            const fs::path dir = plan.work_dir / stem;
            if (!fs::exists(dir / "best" / "model.json")) {
                if (!plan.train_missing) {
                    spdlog::warn("no checkpoint for {} under {}; skipping", stem, dir.string());
                    for (auto s : plan.searches) out.skipped.push_back(cell_name(spec.name, ab, s));
                    continue;
                }
                spdlog::info("training {}", stem);
                train(cfg, dir);
            }
            const Checkpoint ck = load_checkpoint(dir / "best");
            for (auto s : plan.searches) {
                generation::GenerationConfig gen = cfg.generation;
                gen.strategy = s;
                const auto caps = caption_records(*ck.model, ck.vocab, records, cfg.image_size, gen);
                out.table.rows.push_back({spec.name, ab, s, score_captions(caps)});
                spdlog::info("{}: CIDEr {:.4f}", out.table.rows.back().cell(), out.table.rows.back().scores.cider);
            }
        }
    }
    if (out.table.rows.empty()) {
        spdlog::warn("no cells evaluated");
        return out;
    }
    export_csv(plan.work_dir / "results.csv", out.table);
    export_json(plan.work_dir / "results.json", out.table);

    for (model::Ablation ab : plan.ablations) {
        for (auto s : plan.searches) {
            const auto slice = score_table(out.table, s, ab);
            const std::string key = model::to_string(ab) + "-" + generation::to_string(s);
            if (slice.rows.size() < 3) {
                spdlog::info("slice {} has {} encoders; ranking needs 3", key, slice.rows.size());
                continue;
            }
            try {
                const auto labels = ranking::rank_encoders(slice);
                std::ofstream(plan.work_dir / ("clusters_" + key + ".json")) << ranking::to_json(labels, slice).dump(2) << '\n';
                out.rankings.emplace(key, labels);
            } catch (const std::invalid_argument& e) {
                spdlog::warn("ranking skipped for {}: {}", key, e.what());
            }
        }
    }
    return out;
}

}  // namespace rsic::harness
