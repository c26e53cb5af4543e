#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rsic/annotation/server.hpp"
#include "rsic/annotation/store.hpp"
#include "rsic/classification/classification.hpp"
#include "rsic/corpus/images.hpp"
#include "rsic/errors.hpp"
#include "rsic/harness/gradcheck.hpp"
#include "rsic/harness/results.hpp"
#include "rsic/harness/synthetic.hpp"
#include "rsic/harness/train.hpp"
#include "rsic/util/csv.hpp"

using namespace rsic;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return json::parse(in);
}

json metrics_json(const metrics::MetricVector& m) {
    json j;
    const auto v = m.values();
    for (std::size_t i = 0; i < v.size(); ++i) j[metrics::MetricVector::names()[i]] = v[i];
    return j;
}

void print_metrics(const metrics::MetricVector& m) {
    const auto v = m.values();
    for (std::size_t i = 0; i < v.size(); ++i) std::printf("%-8s %.4f\n", metrics::MetricVector::names()[i], v[i]);
}

harness::ExperimentConfig config_from(const std::string& ini, const std::vector<std::string>& overrides) {
    harness::ExperimentConfig cfg = ini.empty() ? harness::ExperimentConfig{} : harness::load_config(ini);
    for (const auto& o : overrides) harness::apply_override(cfg, o);
    return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur.push_back(c);
        }
    }
    return out;
}

// Checkpoint plus the records of one split, ready for decoding.
struct Loaded {
    harness::Checkpoint ck;
    std::vector<corpus::CaptionRecord> records;
};

Loaded load_for_decoding(const fs::path& checkpoint, const std::string& dataset, const std::string& split, std::size_t limit) {
    Loaded l{harness::load_checkpoint(checkpoint), {}};
    harness::ExperimentConfig cfg = l.ck.config;
    if (!dataset.empty()) cfg.dataset = dataset;
    const fs::path root = cfg.dataset_root();
    const corpus::Dataset ds = corpus::load_dataset(root, root / cfg.manifest);
    l.records = ds.split(corpus::parse_split(split));
    if (limit > 0 && l.records.size() > limit) l.records.resize(limit);
    if (l.records.empty()) throw corpus::DatasetError("split " + split + " of " + root.string() + " is empty");
    return l;
}

generation::GenerationConfig decoding_config(const harness::Checkpoint& ck, const std::string& search, std::size_t width) {
    generation::GenerationConfig g = ck.config.generation;
    if (!search.empty()) g.strategy = generation::parse_strategy(search);
    if (width > 0) g.beam_width = width;
    return harness::effective_generation(g, ck.model->config().decoder.max_len);
}

std::string decode_one(const corpus::Vocabulary& v, corpus::TokenId id) {
    const std::vector<corpus::TokenId> one{id};
    return id == corpus::Vocabulary::kEnd ? "</s>" : corpus::decode_tokens(v, one);
}

// Heat map of one attention grid blended over the image.
nn::Tensor overlay(const nn::Tensor& image, const generation::AttentionMap& m) {
    const std::size_t h = image.shape()[0], w = image.shape()[1];
    double peak = 0;
    for (double v : m.weights) peak = std::max(peak, v);
    nn::Tensor out({h, w, 3});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t gy = y * m.side / h, gx = x * m.side / w;
            const double a = peak > 0 ? m.weights[gy * m.side + gx] / peak : 0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double base = image[(y * w + x) * 3 + c];
                const double heat = c == 0 ? 1.0 : c == 1 ? a : 0.0;
                out[(y * w + x) * 3 + c] = 0.5 * base + 0.5 * a * heat;
            }
        }
    }
    return out;
}

int run_train(const std::string& ini, const std::vector<std::string>& overrides, std::string out) {
    const auto cfg = config_from(ini, overrides);
    if (out.empty()) {
        out = (fs::path("runs") / cfg.resolved_dataset_name() /
               (harness::encoder_abbreviation(cfg.encoder.backbone.name) + "-" + model::to_string(cfg.encoder.ablation)))
                  .string();
    }
    const auto r = harness::train(cfg, out);
    std::printf("best epoch %zu, val ROUGE-L %.4f, %zu epochs%s\ncheckpoint %s\n", r.best_epoch, r.state.best_val_rouge_l,
                r.log.size(), r.stopped_early ? " (early stop)" : "", r.checkpoint.string().c_str());
    return 0;
}

struct GenerateArgs {
    std::string checkpoint, dataset, split = "test", search, out = "captions.json", attention_dir;
    std::size_t width = 0, limit = 0, attention_count = 4;
};

int run_generate(const GenerateArgs& a) {
    const Loaded l = load_for_decoding(a.checkpoint, a.dataset, a.split, a.limit);
    const auto gen = decoding_config(l.ck, a.search, a.width);
    const auto caps = harness::caption_records(*l.ck.model, l.ck.vocab, l.records, l.ck.config.image_size, gen);
    const std::string cell = harness::cell_name(l.ck.config.encoder.backbone.name, l.ck.config.encoder.ablation, gen.strategy);
    json items = json::array();
    for (std::size_t i = 0; i < caps.size(); ++i) {
        items.push_back({{"item_id", cell + "_" + caps[i].image_id},
                         {"image_id", caps[i].image_id},
                         {"image_path", fs::absolute(l.records[i].image_path).string()},
                         {"caption", caps[i].caption},
                         {"encoder", l.ck.config.encoder.backbone.name},
                         {"search", generation::to_string(gen.strategy)},
                         {"references", caps[i].references}});
        if (i < 5) std::printf("%s: %s\n", caps[i].image_id.c_str(), caps[i].caption.c_str());
    }
    write_json(a.out, items);
    std::printf("%zu captions -> %s\n", caps.size(), a.out.c_str());

    if (!a.attention_dir.empty()) {
        fs::create_directories(a.attention_dir);
        const std::size_t n = std::min(a.attention_count, l.records.size());
        for (std::size_t i = 0; i < n; ++i) {
            const std::vector<fs::path> path{l.records[i].image_path};
            const nn::Tensor image = corpus::load_images(path, l.ck.config.image_size);
            const nn::Tensor enc = l.ck.model->encode_images(image);
            const generation::BoundCaptioner bound(*l.ck.model, enc);
            const auto tokens = generation::generate(bound, gen);
            const auto maps = generation::extract_attention_maps(*l.ck.model, enc, tokens);
            const std::size_t s = l.ck.config.image_size;
            nn::Tensor rgb({s, s, 3});
            std::copy(image.values().begin(), image.values().end(), rgb.values().begin());
            json steps = json::array();
            for (std::size_t k = 0; k < maps.size(); ++k) {
                const std::string word = decode_one(l.ck.vocab, maps[k].token);
                const fs::path png = fs::path(a.attention_dir) / (l.records[i].image_id + "_" + std::to_string(k) + ".png");
                corpus::save_image(png, overlay(rgb, maps[k]));
                steps.push_back({{"token", maps[k].token}, {"text", word}, {"side", maps[k].side}, {"weights", maps[k].weights}, {"png", png.filename().string()}});
            }
            write_json(fs::path(a.attention_dir) / (l.records[i].image_id + ".json"),
                       {{"image_id", l.records[i].image_id}, {"caption", corpus::decode_tokens(l.ck.vocab, tokens.ids)}, {"steps", steps}});
        }
        std::printf("attention maps for %zu images -> %s\n", n, a.attention_dir.c_str());
    }
    return 0;
}

struct EvaluateArgs {
    std::string checkpoint, captions, dataset, split = "test", search, out;
    std::size_t width = 0, limit = 0;
    // Experiment mode
    std::string config, encoders, ablations = "MHT", work_dir = "experiment";
    std::vector<std::string> overrides;
    bool no_train = false;
};

int run_evaluate(const EvaluateArgs& a) {
    if (!a.config.empty() || !a.encoders.empty()) {
        harness::ExperimentPlan plan;
        plan.base = config_from(a.config, a.overrides);
        for (const auto& e : split_list(a.encoders)) {
            model::BackboneSpec spec = model::parse_backbone_spec(e);
            spec.out_channels = plan.base.encoder.backbone.out_channels;
            plan.encoders.push_back(spec);
        }
        if (plan.encoders.empty()) throw ConfigError("--encoders is required in experiment mode");
        plan.ablations.clear();
        for (const auto& s : split_list(a.ablations)) plan.ablations.push_back(model::parse_ablation(s));
        plan.work_dir = a.work_dir;
        plan.train_missing = !a.no_train;
        plan.split = corpus::parse_split(a.split);
        const auto outcome = harness::run_experiment(plan);
        for (const auto& r : outcome.table.rows) std::printf("%-10s CIDEr %.4f  BLEU-4 %.4f\n", r.cell().c_str(), r.scores.cider, r.scores.bleu4);
        for (const auto& s : outcome.skipped) std::printf("%-10s skipped\n", s.c_str());
        for (const auto& [key, c] : outcome.rankings) {
            std::printf("%s Good:", key.c_str());
            for (const auto& m : c.members(ranking::Label::good)) std::printf(" %s", m.c_str());
            std::printf("\n");
        }
        std::printf("results -> %s\n", (plan.work_dir / "results.csv").string().c_str());
        return 0;
    }

    std::vector<metrics::EvalPair> pairs;
    if (!a.captions.empty()) {
        for (const auto& j : read_json(a.captions)) {
            pairs.push_back(metrics::make_eval_pair(j.value("image_id", j.at("item_id").get<std::string>()), j.at("caption").get<std::string>(),
                                                    j.at("references").get<std::vector<std::string>>()));
        }
    } else if (!a.checkpoint.empty()) {
        const Loaded l = load_for_decoding(a.checkpoint, a.dataset, a.split, a.limit);
        const auto gen = decoding_config(l.ck, a.search, a.width);
        for (const auto& c : harness::caption_records(*l.ck.model, l.ck.vocab, l.records, l.ck.config.image_size, gen))
            pairs.push_back(metrics::make_eval_pair(c.image_id, c.caption, c.references));
    } else {
        throw ConfigError("evaluate needs --checkpoint, --captions or experiment options");
    }
    const auto m = metrics::evaluate_corpus(pairs);
    print_metrics(m);
    if (!a.out.empty()) write_json(a.out, {{"pairs", pairs.size()}, {"scores", metrics_json(m)}});
    return 0;
}

int run_rank(const std::string& scores, const std::string& dataset, const std::string& search, const std::string& out) {
    const auto t = ranking::read_scores_csv(scores, dataset, generation::parse_strategy(search));
    const auto c = ranking::rank_encoders(t);
    for (auto l : {ranking::Label::good, ranking::Label::medium, ranking::Label::bad}) {
        std::printf("%-6s", ranking::to_string(l).c_str());
        for (const auto& m : c.members(l)) std::printf(" %s", m.c_str());
        std::printf("\n");
    }
    if (!c.pulled.empty()) std::printf("pulled into Good: %zu\n", c.pulled.size());
    if (!out.empty()) write_json(out, ranking::to_json(c, t));
    return 0;
}

struct ClassifyArgs {
    std::string dataset, backbone = "toy", out = "classification.json", aggregate, config;
    std::vector<std::string> overrides;
    std::size_t epochs = 10, batch = 64, image_size = 0;
    double lr = 1e-4;
    bool frozen = false;
    std::uint64_t seed = 0;
};

int run_classify(const ClassifyArgs& a) {
    if (!a.aggregate.empty()) {
        // Per-dataset accuracy table -> macro/micro per row.
        std::ifstream in(a.aggregate);
        if (!in) throw std::runtime_error("cannot open " + a.aggregate);
        std::string line;
        std::getline(in, line);
        const auto header = util::split_csv_line(line);
        std::map<std::string, std::size_t> sizes;
        for (std::size_t i = 1; i < header.size(); ++i)
            if (auto p = harness::dataset_preset(header[i])) sizes[header[i]] = p->test_size;
        json rows = json::array();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = util::split_csv_line(line);
            std::map<std::string, double> acc;
            for (std::size_t i = 1; i < f.size() && i < header.size(); ++i)
                if (sizes.count(header[i])) acc[header[i]] = std::stod(f[i]);
            const auto r = classification::aggregate_report(acc, sizes);
            std::printf("%-14s macro %.2f  micro %.2f\n", f[0].c_str(), r.macro, r.micro);
            json j = classification::to_json(r);
            j["encoder"] = f[0];
            rows.push_back(j);
        }
        write_json(a.out, rows);
        return 0;
    }

    harness::ExperimentConfig cfg = config_from(a.config, a.overrides);
    if (!a.dataset.empty()) cfg.dataset = a.dataset;
    {
        const std::size_t channels = cfg.encoder.backbone.out_channels;
        cfg.encoder.backbone = model::parse_backbone_spec(a.backbone);
        cfg.encoder.backbone.out_channels = channels;
    }
    if (a.image_size) cfg.image_size = a.image_size;
    const fs::path root = cfg.dataset_root();
    const corpus::Dataset ds = corpus::load_dataset(root, root / cfg.manifest);
    std::set<std::string> names;
    for (const auto& r : ds.train) names.insert(r.category);
    std::vector<std::string> classes(names.begin(), names.end());
    if (auto p = harness::dataset_preset(cfg.resolved_dataset_name()); p && p->num_classes != classes.size())
        spdlog::warn("{} train categories found, the dataset defines {}", classes.size(), p->num_classes);
    auto encode = [&](const std::vector<corpus::CaptionRecord>& recs, nn::Tensor& images, std::vector<std::int32_t>& labels) {
        std::vector<fs::path> paths;
        for (const auto& r : recs) {
            const auto it = std::find(classes.begin(), classes.end(), r.category);
            if (it == classes.end()) throw corpus::DatasetError("category \"" + r.category + "\" of " + r.image_id + " unseen in train");
            labels.push_back(static_cast<std::int32_t>(it - classes.begin()));
            paths.push_back(r.image_path);
        }
        images = corpus::load_images(paths, cfg.image_size);
    };
    nn::Tensor train_x, test_x;
    std::vector<std::int32_t> train_y, test_y;
    encode(ds.train, train_x, train_y);
    const auto& test = ds.test.empty() ? ds.val : ds.test;
    encode(test, test_x, test_y);

    // The probe never runs the decoder; keep it minimal.
    cfg.decoder.layers = 1;
    cfg.decoder.heads = 1;
    cfg.decoder.width = 8;
    model::CaptionModel model(harness::model_config(cfg, corpus::Vocabulary().size(), 8));
    classification::ClassHeadConfig head_cfg;
    head_cfg.num_classes = classes.size();
    head_cfg.patch_count = cfg.encoder.patch_count;
    head_cfg.feature_width = cfg.encoder.feature_width;
    head_cfg.freeze_encoder = a.frozen;
    classification::ClassificationHead head(head_cfg, a.seed);
    classification::ProbeOptions opts;
    opts.epochs = a.epochs;
    opts.batch = a.batch;
    opts.learn_rate = a.lr;
    opts.seed = a.seed;
    const double loss = classification::train_probe(model, head, train_x, train_y, opts);
    const double acc = classification::accuracy(classification::predict(model, head, test_x), test_y);
    std::printf("%s / %s: test accuracy %.2f%% over %zu images (final train loss %.4f)\n", cfg.resolved_dataset_name().c_str(),
                cfg.encoder.backbone.name.c_str(), acc, test_y.size(), loss);
    write_json(a.out, {{"dataset", cfg.resolved_dataset_name()},
                       {"backbone", cfg.encoder.backbone.name},
                       {"classes", classes},
                       {"frozen_encoder", a.frozen},
                       {"epochs", a.epochs},
                       {"test_images", test_y.size()},
                       {"accuracy", acc},
                       {"final_train_loss", loss}});
    return 0;
}

struct SweepArgs {
    std::string checkpoint, dataset, split = "test", out = "beam_sweep.csv", plot = "beam_sweep.png";
    std::size_t min_width = 2, max_width = 10, limit = 0;
};

int run_sweep(const SweepArgs& a) {
    if (a.min_width == 0 || a.max_width < a.min_width) throw ConfigError("need 1 <= --min-width <= --max-width");
    const Loaded l = load_for_decoding(a.checkpoint, a.dataset, a.split, a.limit);
    generation::GenerationConfig base = decoding_config(l.ck, "beam", 0);
    std::vector<std::vector<std::size_t>> ids;
    std::vector<std::unique_ptr<generation::BoundCaptioner>> bound;
    for (std::size_t start = 0; start < l.records.size(); start += 16) {
        const std::size_t end = std::min(l.records.size(), start + 16);
        std::vector<fs::path> paths;
        for (std::size_t i = start; i < end; ++i) paths.push_back(l.records[i].image_path);
        const nn::Tensor enc = l.ck.model->encode_images(corpus::load_images(paths, l.ck.config.image_size));
        for (std::size_t i = 0; i < end - start; ++i) {
            const std::vector<std::size_t> row{i};
            bound.push_back(std::make_unique<generation::BoundCaptioner>(*l.ck.model, nn::take_rows(enc, row)));
        }
    }
    std::vector<generation::SweepItem> items;
    for (std::size_t i = 0; i < l.records.size(); ++i) items.push_back({bound[i].get(), l.records[i].image_id, l.records[i].references});
    std::vector<std::size_t> widths;
    for (std::size_t w = a.min_width; w <= a.max_width; ++w) widths.push_back(w);
    const auto rows = generation::beam_sweep(items, l.ck.vocab, base, widths);
    generation::write_sweep_csv(a.out, rows);
    generation::plot_sweep(a.plot, rows);
    for (const auto& r : rows) std::printf("width %2zu  BLEU-4 %.4f  CIDEr %.4f\n", r.width, r.scores.bleu4, r.scores.cider);
    std::printf("%zu rows -> %s, plot -> %s\n", rows.size(), a.out.c_str(), a.plot.c_str());
    return 0;
}

int run_gradcheck(const harness::GradCheckOptions& o, const std::string& out) {
    const auto r = harness::grad_check(o);
    std::printf("%-44s %8s %12s\n", "tensor", "entries", "rel. error");
    for (std::size_t i = 0; i < std::min<std::size_t>(10, r.tensors.size()); ++i)
        std::printf("%-44s %8zu %12.3e\n", r.tensors[i].name.c_str(), r.tensors[i].checked, r.tensors[i].relative_error);
    std::printf("%s: %zu tensors, max relative error %.3e (tolerance %.1e)\n", r.passed ? "PASS" : "FAIL", r.tensors.size(),
                r.max_relative_error, o.tolerance);
    if (!out.empty()) {
        json t = json::array();
        for (const auto& x : r.tensors) t.push_back({{"name", x.name}, {"checked", x.checked}, {"relative_error", x.relative_error}});
        write_json(out, {{"part", o.part}, {"passed", r.passed}, {"max_relative_error", r.max_relative_error}, {"tensors", t}});
    }
    return r.passed ? 0 : 1;
}

int run_annotate_create(const std::string& dir, const std::vector<std::string>& files, std::optional<std::uint64_t> seed) {
    std::vector<annotation::AnnotationItem> items;
    for (const auto& f : files) {
        const json j = read_json(f);
        for (const auto& x : j.is_array() ? j : j.at("items")) items.push_back(annotation::item_from_json(x));
    }
    annotation::SessionStore store(dir);
    const std::string id = store.create_session(items, seed);
    std::printf("%s\n", id.c_str());
    return 0;
}

int run_annotate_report(const std::string& dir, const std::string& session, const std::string& out) {
    annotation::SessionStore store(dir);
    const auto r = store.report(session);
    std::printf("%-7s %-14s %8s %9s %8s %6s\n", "Search", "CNN", "Rel", "Part Rel", "Unrel", "n");
    for (const auto& row : r.rows)
        std::printf("%-7s %-14s %8.2f %9.2f %8.2f %6zu\n", row.search.c_str(), row.encoder.c_str(), row.pct[0], row.pct[1], row.pct[2],
                    row.labeled);
    for (const auto& n : r.notes) std::printf("note: %s\n", n.c_str());
    if (!out.empty()) write_json(out, annotation::to_json(r));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Remote-sensing image captioning toolkit"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error")->capture_default_str();

    // train
    std::string train_ini, train_out;
    std::vector<std::string> train_set;
    auto* train = app.add_subcommand("train", "train a captioning model");
    train->add_option("--config,-c", train_ini, "INI config file");
    train->add_option("--set", train_set, "override, e.g. train.learn_rate=2e-4");
    train->add_option("--out,-o", train_out, "run directory (default runs/<dataset>/<encoder>-<orientation>)");

    // generate
    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "caption a split with a checkpoint");
    generate->add_option("--checkpoint", gen.checkpoint, "checkpoint directory")->required();
    generate->add_option("--dataset", gen.dataset, "dataset root (default from the checkpoint)");
    generate->add_option("--split", gen.split)->capture_default_str();
    generate->add_option("--search", gen.search, "greedy|beam (default from the checkpoint)");
    generate->add_option("--beam-width", gen.width);
    generate->add_option("--limit", gen.limit, "first N records only");
    generate->add_option("--out,-o", gen.out)->capture_default_str();
    generate->add_option("--attention-dir", gen.attention_dir, "write per-token attention maps here");
    generate->add_option("--attention-count", gen.attention_count, "images with attention maps")->capture_default_str();

    // evaluate
    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "score captions, a checkpoint, or a whole encoder x search grid");
    evaluate->add_option("--checkpoint", ev.checkpoint);
    evaluate->add_option("--captions", ev.captions, "captions JSON written by generate");
    evaluate->add_option("--dataset", ev.dataset);
    evaluate->add_option("--split", ev.split)->capture_default_str();
    evaluate->add_option("--search", ev.search);
    evaluate->add_option("--beam-width", ev.width);
    evaluate->add_option("--limit", ev.limit);
    evaluate->add_option("--out,-o", ev.out, "metrics JSON");
    evaluate->add_option("--config,-c", ev.config, "experiment mode: base config");
    evaluate->add_option("--set", ev.overrides);
    evaluate->add_option("--encoders", ev.encoders, "experiment mode: comma-separated backbones");
    evaluate->add_option("--ablations", ev.ablations, "comma-separated WOT,SHT,MHT")->capture_default_str();
    evaluate->add_option("--work-dir", ev.work_dir)->capture_default_str();
    evaluate->add_flag("--no-train", ev.no_train, "skip cells without a checkpoint");

    // rank
    std::string rank_scores, rank_dataset, rank_search = "greedy", rank_out;
    auto* rank = app.add_subcommand("rank", "cluster encoders into Good / Medium / Bad");
    rank->add_option("--scores", rank_scores, "CSV with encoder and seven metric columns")->required();
    rank->add_option("--dataset", rank_dataset, "pick one dataset from a long-format file");
    rank->add_option("--search", rank_search)->capture_default_str();
    rank->add_option("--out,-o", rank_out, "labels + diagnostics JSON");

    // classify
    ClassifyArgs cl;
    auto* classify = app.add_subcommand("classify", "scene-classification probe on encoder features");
    classify->add_option("--dataset", cl.dataset, "dataset root");
    classify->add_option("--backbone", cl.backbone, "NAME or NAME:weights=PATH")->capture_default_str();
    classify->add_option("--config,-c", cl.config);
    classify->add_option("--set", cl.overrides);
    classify->add_option("--epochs", cl.epochs)->capture_default_str();
    classify->add_option("--batch", cl.batch)->capture_default_str();
    classify->add_option("--lr", cl.lr)->capture_default_str();
    classify->add_option("--image-size", cl.image_size);
    classify->add_option("--seed", cl.seed);
    classify->add_flag("--frozen", cl.frozen, "train the head only");
    classify->add_option("--aggregate", cl.aggregate, "CSV of per-dataset accuracies -> macro/micro");
    classify->add_option("--out,-o", cl.out)->capture_default_str();

    // sweep
    SweepArgs sw;
    auto* sweep = app.add_subcommand("sweep", "beam-width sweep table and chart");
    sweep->add_option("--checkpoint", sw.checkpoint)->required();
    sweep->add_option("--dataset", sw.dataset);
    sweep->add_option("--split", sw.split)->capture_default_str();
    sweep->add_option("--min-width", sw.min_width)->capture_default_str();
    sweep->add_option("--max-width", sw.max_width)->capture_default_str();
    sweep->add_option("--limit", sw.limit);
    sweep->add_option("--out,-o", sw.out)->capture_default_str();
    sweep->add_option("--plot", sw.plot)->capture_default_str();

    // gradcheck
    harness::GradCheckOptions gc;
    std::string gc_out;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check on a toy model");
    gradcheck->add_option("--part", gc.part, "encoder, decoder, or a parameter-name prefix")->capture_default_str();
    gradcheck->add_option("--tolerance", gc.tolerance)->capture_default_str();
    gradcheck->add_option("--max-entries", gc.max_entries)->capture_default_str();
    gradcheck->add_option("--seed", gc.seed);
    gradcheck->add_option("--out,-o", gc_out, "report JSON");

    // annotate
    auto* annotate = app.add_subcommand("annotate", "subjective-evaluation sessions");
    annotate->require_subcommand(1);
    std::string sessions_dir = "sessions", ui_dir, host = "127.0.0.1", session, report_out;
    int port = 8080;
    bool show_refs = false;
    std::vector<std::string> caption_files;
    std::optional<std::uint64_t> session_seed;
    auto* serve = annotate->add_subcommand("serve", "run the HTTP API (and UI if given)");
    serve->add_option("--sessions-dir", sessions_dir)->capture_default_str();
    serve->add_option("--port", port)->capture_default_str();
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--ui-dir", ui_dir, "built UI assets");
    serve->add_flag("--show-references", show_refs, "send reference captions with items");
    auto* create = annotate->add_subcommand("create", "new session from generate outputs");
    create->add_option("--sessions-dir", sessions_dir)->capture_default_str();
    create->add_option("--captions", caption_files, "captions JSON files")->required();
    create->add_option("--seed", session_seed, "shuffle seed (random when omitted)");
    auto* report = annotate->add_subcommand("report", "percentages per encoder and search");
    report->add_option("--sessions-dir", sessions_dir)->capture_default_str();
    report->add_option("--session", session)->required();
    report->add_option("--out,-o", report_out);

    // synthetic
    harness::SyntheticOptions syn;
    std::string syn_out;
    auto* synthetic = app.add_subcommand("synthetic", "write the coloured-shapes toy dataset");
    synthetic->add_option("--out,-o", syn_out, "dataset root")->required();
    synthetic->add_option("--train", syn.train)->capture_default_str();
    synthetic->add_option("--val", syn.val)->capture_default_str();
    synthetic->add_option("--test", syn.test)->capture_default_str();
    synthetic->add_option("--size", syn.size, "image side in pixels")->capture_default_str();
    synthetic->add_option("--seed", syn.seed);

    CLI11_PARSE(app, argc, argv);
    spdlog::set_default_logger(spdlog::stderr_color_mt("rsic"));
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (*train) return run_train(train_ini, train_set, train_out);
        if (*generate) return run_generate(gen);
        if (*evaluate) return run_evaluate(ev);
        if (*rank) return run_rank(rank_scores, rank_dataset, rank_search, rank_out);
        if (*classify) return run_classify(cl);
        if (*sweep) return run_sweep(sw);
        if (*gradcheck) return run_gradcheck(gc, gc_out);
        if (*synthetic) {
            harness::make_synthetic_dataset(syn_out, syn);
            std::printf("%zu/%zu/%zu images -> %s\n", syn.train, syn.val, syn.test, syn_out.c_str());
            return 0;
        }
        if (*create) return run_annotate_create(sessions_dir, caption_files, session_seed);
        if (*report) return run_annotate_report(sessions_dir, session, report_out);
        if (*serve) {
            annotation::SessionStore store(sessions_dir);
            annotation::ServerOptions opts;
            if (!ui_dir.empty()) opts.ui_dir = ui_dir;
            opts.show_references = show_refs;
            annotation::AnnotationServer server(store, opts);
            std::printf("serving %s on http://%s:%d\n", sessions_dir.c_str(), host.c_str(), port);
            std::fflush(stdout);
            return server.listen(host, port) ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        spdlog::error("config: {}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
