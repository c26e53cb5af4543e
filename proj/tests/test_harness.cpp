#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "rsic/errors.hpp"
#include "rsic/harness/gradcheck.hpp"
#include "rsic/harness/results.hpp"
#include "rsic/harness/synthetic.hpp"
#include "rsic/harness/train.hpp"
#include "rsic/nn/optim.hpp"

using namespace rsic;
using namespace rsic::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("rsic_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Small enough that an epoch over 20 pairs takes a few milliseconds.
ExperimentConfig tiny_config(const fs::path& data) {
    ExperimentConfig c;
    c.dataset = data;
    c.image_size = 56;
    c.encoder.backbone.name = "toy";
    c.encoder.backbone.out_channels = 8;
    c.encoder.feature_width = 16;
    c.encoder.layers = 1;
    c.encoder.heads = 2;
    c.decoder.layers = 1;
    c.decoder.heads = 2;
    c.decoder.width = 16;
    c.decoder.vocab_size = 280;
    c.batch = 8;
    c.max_epochs = 3;
    c.learn_rate = 1e-3;
    c.generation.max_len = 12;
    return c;
}

const fs::path& synthetic_root() {
    static const fs::path root = [] {
        const fs::path p = scratch("data") / "toyset";
        make_synthetic_dataset(p);
        return p;
    }();
    return root;
}

}  // namespace

TEST_CASE("config file round trip keeps every field and the hash") {
    const fs::path dir = scratch("ini");
    ExperimentConfig c = tiny_config("/data/UCM");
    c.encoder.ablation = model::Ablation::SHT;
    c.generation.strategy = generation::Strategy::beam;
    c.generation.beam_width = 7;
    c.seed = 42;
    save_config(dir / "a.ini", c);
    const ExperimentConfig back = load_config(dir / "a.ini");
    CHECK(canonical_json(back) == canonical_json(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 16);

    ExperimentConfig d = c;
    apply_override(d, "train.learn_rate=0.002");
    CHECK(d.learn_rate == 0.002);
    CHECK(config_hash(d) != config_hash(c));
    apply_override(d, "generation.search=greedy");
    CHECK(d.generation.strategy == generation::Strategy::greedy);
    CHECK_THROWS_AS(apply_override(d, "train.momentum=0.9"), ConfigError);
    CHECK_THROWS_AS(apply_override(d, "no_equals_sign"), ConfigError);

    std::ofstream(dir / "bad.ini") << "[train]\nlearn_rate = 1e-4\nwhatever = 3\n";
    CHECK_THROWS_AS(load_config(dir / "bad.ini"), ConfigError);

    const auto j = canonical_json(c);
    CHECK(canonical_json(config_from_json(j)) == j);
}

TEST_CASE("config validation") {
    ExperimentConfig c = tiny_config("x");
    CHECK_NOTHROW(c.validate());
    for (double w : {0.0, 1.0, -0.1}) {
        ExperimentConfig bad = c;
        bad.warmup_frac = w;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
    ExperimentConfig bad = c;
    bad.batch = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.learn_rate = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.patience = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("relative dataset paths resolve under RSIC_DATA_ROOT") {
    ExperimentConfig c;
    c.dataset = "UCM";
    ::setenv("RSIC_DATA_ROOT", "/srv/rs", 1);
    CHECK(c.dataset_root() == fs::path("/srv/rs/UCM"));
    CHECK(c.resolved_dataset_name() == "UCM");
    ::unsetenv("RSIC_DATA_ROOT");
    c.dataset = "/abs/SYDNEY";
    CHECK(c.dataset_root() == fs::path("/abs/SYDNEY"));
    CHECK(c.resolved_dataset_name() == "SYDNEY");
}

TEST_CASE("dataset presets") {
    CHECK(dataset_preset("SYDNEY")->test_size == 58);
    CHECK(dataset_preset("UCM")->num_classes == 21);
    CHECK(dataset_preset("RSICD")->vocab_size == 5240);
    CHECK_FALSE(dataset_preset("toyset").has_value());
}

TEST_CASE("cell names follow encoder-orientation-search") {
    using generation::Strategy;
    using model::Ablation;
    CHECK(cell_name("convnext", Ablation::MHT, Strategy::greedy) == "C-MHT-G");
    CHECK(cell_name("resnet", Ablation::SHT, Strategy::beam) == "R-SHT-B");
    CHECK(cell_name("mobilenetv3", Ablation::WOT, Strategy::beam) == "M3-WOT-B");
    CHECK(cell_name("wide_resnet", Ablation::MHT, Strategy::greedy) == "WR-MHT-G");
    CHECK_THROWS(encoder_abbreviation("transformer"));
}

TEST_CASE("schedule sampled against its piecewise-linear definition") {
    for (std::size_t total : {10u, 64u, 1000u, 4096u}) {
        const nn::LinearWarmupSchedule s(1e-4, total, 0.1);
        const double w = static_cast<double>(s.warmup_steps());
        CHECK(s.lr(0) == 0.0);
        CHECK(s.lr(s.warmup_steps()) == doctest::Approx(1e-4).epsilon(1e-12));
        CHECK(s.lr(total) == doctest::Approx(0.0));
        for (std::size_t k = 1; k < total; k += 1 + total / 37) {
            const double x = static_cast<double>(k);
            const double expect = x <= w ? 1e-4 * x / w : 1e-4 * (static_cast<double>(total) - x) / (static_cast<double>(total) - w);
            CHECK(s.lr(k) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("lr 0 stops after exactly patience + 1 validations") {
    ExperimentConfig c = tiny_config(synthetic_root());
    c.learn_rate = 0;
    c.max_epochs = 64;
    c.patience = 10;
    const fs::path out = scratch("lr0");
    const TrainResult r = train(c, out);
    CHECK(r.log.size() == 11);
    CHECK(r.stopped_early);
    CHECK(r.best_epoch == 1);
    for (const auto& e : r.log) CHECK(e.last_lr == 0.0);
    CHECK(fs::exists(out / "best" / "model.rsic"));
}

TEST_CASE("training respects clipping, the schedule and early-stopping bookkeeping") {
    ExperimentConfig c = tiny_config(synthetic_root());
    c.max_epochs = 6;
    c.patience = 2;
    c.learn_rate = 3e-3;
    c.clip_norm = 1.0;
    std::size_t clipped = 0, steps = 0;
    std::vector<double> lrs;
    TrainHooks hooks;
    hooks.on_step = [&](std::size_t, double lr, double pre, double post) {
        ++steps;
        lrs.push_back(lr);
        if (pre > 1.0) {
            ++clipped;
            CHECK(post <= 1.0 + 1e-6);
        } else {
            CHECK(post == doctest::Approx(pre));
        }
    };
    const TrainResult r = train(c, scratch("clip"), hooks);
    CHECK(clipped > 0);
    REQUIRE(!lrs.empty());
    CHECK(lrs.front() == 0.0);
    CHECK(*std::max_element(lrs.begin(), lrs.end()) <= c.learn_rate);
    CHECK(r.log.size() <= c.max_epochs);

    // Best checkpoint holds the best val score, nothing later beats it, and
    // the stagnation counter never passes patience.
    std::size_t since = 0;
    for (const auto& e : r.log) {
        since = e.improved ? 0 : since + 1;
        CHECK(since <= c.patience);
        if (e.epoch > r.best_epoch) CHECK(e.val_rouge_l <= r.state.best_val_rouge_l);
    }
    const Checkpoint ck = load_checkpoint(r.checkpoint);
    CHECK(ck.epoch == r.best_epoch);
    CHECK(ck.val_rouge_l == r.state.best_val_rouge_l);
    CHECK(ck.config_hash == config_hash(c));
}

TEST_CASE("same config and seed give bitwise-identical checkpoints") {
    ExperimentConfig c = tiny_config(synthetic_root());
    c.max_epochs = 2;
    c.seed = 9;
    const TrainResult a = train(c, scratch("det_a"));
    const TrainResult b = train(c, scratch("det_b"));
    CHECK(slurp(a.checkpoint / "model.rsic") == slurp(b.checkpoint / "model.rsic"));
    CHECK(slurp(a.checkpoint / "model.json") == slurp(b.checkpoint / "model.json"));
    CHECK(slurp(a.checkpoint / "tokenizer.json") == slurp(b.checkpoint / "tokenizer.json"));

    c.seed = 10;
    const TrainResult d = train(c, scratch("det_c"));
    CHECK(slurp(a.checkpoint / "model.rsic") != slurp(d.checkpoint / "model.rsic"));
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    ExperimentConfig c = tiny_config(synthetic_root());
    c.learn_rate = 1e300;
    c.clip_norm = 1e300;
    c.max_epochs = 5;
    CHECK_THROWS_AS(train(c, scratch("nan")), NumericError);
}

TEST_CASE("results export: CSV and JSON") {
    ResultsTable t{"UCM", 3, "00ff00ff00ff00ff", {}};
    t.rows.push_back({"convnext", model::Ablation::MHT, generation::Strategy::greedy,
                      {0.1 + 0.2, 1.0 / 3.0, 2e-17, 0.5, 0.25, 0.125, 2.6437}});
    const fs::path dir = scratch("export");
    export_csv(dir / "one.csv", t);
    std::istringstream lines(slurp(dir / "one.csv"));
    std::vector<std::string> got;
    for (std::string l; std::getline(lines, l);) got.push_back(l);
    REQUIRE(got.size() == 2);
    CHECK(got[0] == "dataset,seed,config_hash,cell,encoder,ablation,search,bleu1,bleu2,bleu3,bleu4,meteor,rouge_l,cider");
    CHECK(got[1].rfind("UCM,3,00ff00ff00ff00ff,C-MHT-G,convnext,MHT,greedy,", 0) == 0);
    CHECK(read_results_csv(dir / "one.csv") == t);

    t.rows.push_back({"resnet", model::Ablation::SHT, generation::Strategy::beam, {0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1}});
    export_csv(dir / "two.csv", t);
    export_csv(dir / "two_again.csv", t);
    CHECK(slurp(dir / "two.csv") == slurp(dir / "two_again.csv"));
    CHECK(read_results_csv(dir / "two.csv") == t);

    export_json(dir / "t.json", t);
    export_json(dir / "t_again.json", t);
    CHECK(slurp(dir / "t.json") == slurp(dir / "t_again.json"));
    const auto j = nlohmann::json::parse(slurp(dir / "t.json"));
    CHECK(j.at("config_hash") == "00ff00ff00ff00ff");
    CHECK(j.at("rows").size() == 2);
    CHECK(j.at("rows")[1].at("cell") == "R-SHT-B");

    CHECK_THROWS(export_csv(dir / "none.csv", ResultsTable{}));
    CHECK_THROWS(export_csv(dir / "missing_dir" / "x.csv", t));
}

TEST_CASE("run_experiment: 2 encoders x 2 searches gives 4 rows, reruns are identical") {
    ExperimentConfig c = tiny_config(synthetic_root());
    c.max_epochs = 1;
    c.generation.beam_width = 3;
    ExperimentPlan plan;
    plan.base = c;
    model::BackboneSpec toy;
    toy.name = "toy";
    toy.out_channels = 8;
    model::BackboneSpec alex;
    alex.name = "alexnet";
    alex.out_channels = 8;
    plan.encoders = {toy, alex};
    const fs::path first_dir = scratch("exp_a");
    plan.work_dir = first_dir;
    const ExperimentOutcome a = run_experiment(plan);
    REQUIRE(a.table.rows.size() == 4);
    std::set<std::string> cells;
    for (const auto& r : a.table.rows) cells.insert(r.cell());
    CHECK(cells == std::set<std::string>{"T-MHT-G", "T-MHT-B", "A-MHT-G", "A-MHT-B"});
    CHECK(a.rankings.empty());  // two encoders per slice is below the ranking minimum
    CHECK(fs::exists(plan.work_dir / "results.csv"));
    CHECK(read_results_csv(plan.work_dir / "results.csv") == a.table);
    CHECK(score_table(a.table, generation::Strategy::beam).rows.size() == 2);

    plan.work_dir = scratch("exp_b");
    const ExperimentOutcome b = run_experiment(plan);
    CHECK(b.table == a.table);
    CHECK(slurp(plan.work_dir / "results.csv") == slurp(first_dir / "results.csv"));

    plan.work_dir = scratch("exp_skip");
    plan.train_missing = false;
    const ExperimentOutcome s = run_experiment(plan);
    CHECK(s.table.rows.empty());
    CHECK(s.skipped.size() == 4);
}

TEST_CASE("gradient check") {
    SUBCASE("toy encoder and decoder pass") {
        for (const char* part : {"encoder", "decoder"}) {
            GradCheckOptions o;
            o.part = part;
            const GradCheckReport r = grad_check(o);
            CAPTURE(part);
            CHECK(r.passed);
            CHECK(r.max_relative_error < 1e-4);
            CHECK(r.tensors.size() > 5);
        }
    }
    SUBCASE("zero-parameter submodule passes trivially") {
        model::ModelConfig cfg = gradcheck_model_config();
        cfg.encoder.ablation = model::Ablation::WOT;
        model::CaptionModel m(cfg);
        GradCheckOptions o;
        o.part = "encoder.layer";
        const GradCheckReport r = grad_check(m, o);
        CHECK(r.passed);
        CHECK(r.tensors.empty());
    }
    SUBCASE("a corrupted gradient fails and is listed first") {
        GradCheckOptions o;
        o.part = "decoder";
        o.tamper = [](nn::ParameterStore& p) { p.at("decoder.ln_f.gamma").grad[0] += 0.05; };
        const GradCheckReport r = grad_check(o);
        CHECK_FALSE(r.passed);
        REQUIRE(!r.tensors.empty());
        CHECK(r.tensors.front().name == "decoder.ln_f.gamma");
        for (std::size_t i = 1; i < r.tensors.size(); ++i) CHECK(r.tensors[i].relative_error < 1e-4);
    }
    SUBCASE("sampling caps entries per tensor") {
        GradCheckOptions o;
        o.part = "decoder.wte";
        o.max_entries = 50;
        const GradCheckReport r = grad_check(o);
        REQUIRE(r.tensors.size() == 1);
        CHECK(r.tensors[0].checked == 50);
        CHECK(r.passed);
    }
}
