#include "rsic/harness/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "rsic/corpus/images.hpp"
#include "rsic/errors.hpp"
#include "rsic/nn/archive.hpp"
#include "rsic/nn/optim.hpp"

namespace rsic::harness {

namespace fs = std::filesystem;

model::ModelConfig model_config(const ExperimentConfig& cfg, std::size_t vocab_size, std::size_t max_len) {
    model::ModelConfig m;
    m.encoder = cfg.encoder;
    m.decoder = cfg.decoder;
    m.decoder.vocab_size = vocab_size;
    m.decoder.max_len = max_len;
    m.seed = cfg.seed;
    return m;
}

generation::GenerationConfig effective_generation(const generation::GenerationConfig& gen, std::size_t decoder_max_len) {
    generation::GenerationConfig g = gen;
    g.max_len = std::min(g.max_len, decoder_max_len);
    return g;
}

void save_checkpoint(const fs::path& dir, const ExperimentConfig& cfg, const model::CaptionModel& model,
                     const corpus::Vocabulary& vocab, std::size_t epoch, double val_rouge_l) {
    fs::create_directories(dir);
    nn::save_archive(dir / "model.rsic", nn::to_archive(model.params()));
    vocab.save(dir / "tokenizer.json");
    const nlohmann::json side = {
        {"config", canonical_json(cfg)},
        {"config_hash", config_hash(cfg)},
        {"epoch", epoch},
        {"val_rouge_l", val_rouge_l},
        {"vocab_size", model.config().decoder.vocab_size},
        {"max_len", model.config().decoder.max_len},
    };
    std::ofstream out(dir / "model.json");
    out << side.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / "model.json").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw std::runtime_error("no checkpoint sidecar at " + (dir / "model.json").string());
    nlohmann::json side;
    try {
        in >> side;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("bad checkpoint sidecar " + (dir / "model.json").string() + ": " + e.what());
    }
    Checkpoint ck;
    ck.config = config_from_json(side.at("config"));
    ck.config_hash = side.at("config_hash").get<std::string>();
    ck.epoch = side.at("epoch").get<std::size_t>();
    ck.val_rouge_l = side.at("val_rouge_l").get<double>();
    ck.vocab = corpus::Vocabulary::load(dir / "tokenizer.json");
    const std::size_t vocab_size = side.at("vocab_size").get<std::size_t>();
    if (vocab_size != ck.vocab.size()) {
        throw std::runtime_error("checkpoint vocabulary size " + std::to_string(vocab_size) + " does not match tokenizer (" +
                                 std::to_string(ck.vocab.size()) + ")");
    }
    auto mcfg = model_config(ck.config, vocab_size, side.at("max_len").get<std::size_t>());
    // The archive already holds every backbone tensor.
    mcfg.encoder.backbone.weights_path.reset();
    ck.model = std::make_unique<model::CaptionModel>(mcfg);
    nn::load_into(ck.model->params(), nn::load_archive(dir / "model.rsic"));
    return ck;
}

std::vector<CaptionOutput> caption_records(const model::CaptionModel& model, const corpus::Vocabulary& vocab,
                                           const std::vector<corpus::CaptionRecord>& records, std::size_t image_size,
                                           const generation::GenerationConfig& gen, std::size_t batch) {
    std::vector<CaptionOutput> out;
    const auto g = effective_generation(gen, model.config().decoder.max_len);
    for (std::size_t start = 0; start < records.size(); start += batch) {
        const std::size_t end = std::min(records.size(), start + batch);
        std::vector<fs::path> paths;
        for (std::size_t i = start; i < end; ++i) paths.push_back(records[i].image_path);
        const nn::Tensor enc = model.encode_images(corpus::load_images(paths, image_size));
        const auto caps = generation::caption_features(model, vocab, enc, g);
        for (std::size_t i = start; i < end; ++i) out.push_back({records[i].image_id, caps[i - start], records[i].references});
    }
    return out;
}

metrics::MetricVector score_captions(const std::vector<CaptionOutput>& captions) {
    std::vector<metrics::EvalPair> pairs;
    for (const auto& c : captions) pairs.push_back(metrics::make_eval_pair(c.image_id, c.caption, c.references));
    return metrics::evaluate_corpus(pairs);
}

namespace {

struct Sample {
    std::size_t record;
    corpus::TokenSequence tokens;
};

// Whole-split image cache when it fits in ~256 MB, per-batch loading otherwise.
class ImageSource {
  public:
    ImageSource(const std::vector<corpus::CaptionRecord>& records, std::size_t size) : records_(records), size_(size) {
        if (records.size() * size * size * 3 <= (std::size_t{1} << 25)) {
            std::vector<fs::path> paths;
            for (const auto& r : records) paths.push_back(r.image_path);
            cache_ = corpus::load_images(paths, size);
            cached_ = true;
        }
    }
    nn::Tensor batch(std::span<const std::size_t> rows) const {
        if (cached_) return nn::take_rows(cache_, rows);
        std::vector<fs::path> paths;
        for (std::size_t r : rows) paths.push_back(records_[r].image_path);
        return corpus::load_images(paths, size_);
    }

  private:
    const std::vector<corpus::CaptionRecord>& records_;
    std::size_t size_;
    nn::Tensor cache_;
    bool cached_ = false;
};

double val_rouge_l(const model::CaptionModel& model, const corpus::Vocabulary& vocab,
                   const std::vector<corpus::CaptionRecord>& records, const ExperimentConfig& cfg) {
    generation::GenerationConfig greedy = cfg.generation;
    greedy.strategy = generation::Strategy::greedy;
    std::vector<metrics::EvalPair> pairs;
    for (const auto& c : caption_records(model, vocab, records, cfg.image_size, greedy)) {
        std::vector<std::string> refs;
        for (const auto& r : c.references) refs.push_back(corpus::normalize_caption(r));
        pairs.push_back(metrics::make_eval_pair(c.image_id, c.caption, refs));
    }
    return metrics::rouge_l(pairs);
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const fs::path& out_dir, const TrainHooks& hooks) {
    cfg.validate();
    const fs::path root = cfg.dataset_root();
    const corpus::Dataset ds = corpus::load_dataset(root, root / cfg.manifest);
    if (ds.train.empty()) throw corpus::DatasetError("dataset " + root.string() + " has no train split");
    const auto preset = dataset_preset(cfg.resolved_dataset_name());

    const std::vector<std::string> captions = corpus::normalized_captions(ds.train);
    std::size_t target = cfg.decoder.vocab_size;
    if (target == 0) target = preset ? preset->vocab_size : 512;
    const corpus::Vocabulary vocab = corpus::train_tokenizer(captions, target);
    std::size_t max_len = cfg.decoder.max_len;
    if (max_len == 0) max_len = preset ? preset->max_len : std::max<std::size_t>(3, corpus::longest_encoding(vocab, captions));
    spdlog::info("dataset {}: {} train / {} val / {} test records, vocab {}, max_len {}", cfg.resolved_dataset_name(),
                 ds.train.size(), ds.val.size(), ds.test.size(), vocab.size(), max_len);

    model::CaptionModel model(model_config(cfg, vocab.size(), max_len));

    std::vector<Sample> samples;
    for (std::size_t r = 0; r < ds.train.size(); ++r)
        for (const auto& ref : ds.train[r].references)
            samples.push_back({r, corpus::encode_caption(vocab, corpus::normalize_caption(ref), max_len)});
    const std::vector<corpus::CaptionRecord>& val = ds.val.empty() ? ds.train : ds.val;
    if (ds.val.empty()) spdlog::warn("no val split; early stopping watches the train split");

    const ImageSource images(ds.train, cfg.image_size);
    const std::size_t steps_per_epoch = (samples.size() + cfg.batch - 1) / cfg.batch;
    const nn::LinearWarmupSchedule schedule(cfg.learn_rate, cfg.max_epochs * steps_per_epoch, cfg.warmup_frac);
    nn::AdamW opt({0.9, 0.999, 1e-8, cfg.weight_decay});
    std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    fs::create_directories(out_dir);
    std::ofstream log_file(out_dir / "train_log.jsonl");
    TrainResult result;
    result.checkpoint = out_dir / "best";
    TrainState& st = result.state;

    for (st.epoch = 1; st.epoch <= cfg.max_epochs; ++st.epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog entry;
        entry.epoch = st.epoch;
        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t n = std::min(cfg.batch, order.size() - start);
            std::vector<std::size_t> rows;
            std::vector<corpus::TokenSequence> seqs;
            for (std::size_t i = start; i < start + n; ++i) {
                rows.push_back(samples[order[i]].record);
                seqs.push_back(samples[order[i]].tokens);
            }
            nn::Graph g;
            const nn::Var loss = model.loss(g, images.batch(rows), corpus::pad_batch(seqs, vocab.pad_id()));
            const double value = loss.value()[0];
            if (!std::isfinite(value)) {
                throw NumericError("training loss is " + std::to_string(value) + " at epoch " + std::to_string(st.epoch) +
                                   ", step " + std::to_string(st.global_step));
            }
            model.params().zero_grad();
            g.backward(loss);
            const double pre = model.params().clip_grad_norm(cfg.clip_norm);
            const double post = model.params().grad_norm();
            const double lr = schedule.lr(st.global_step);
            opt.step(model.params(), lr);
            if (hooks.on_step) hooks.on_step(st.global_step, lr, pre, post);
            ++st.global_step;
            loss_sum += value * static_cast<double>(n);
            entry.last_lr = lr;
            entry.max_pre_clip_norm = std::max(entry.max_pre_clip_norm, pre);
            entry.max_post_clip_norm = std::max(entry.max_post_clip_norm, post);
        }
        entry.train_loss = loss_sum / static_cast<double>(samples.size());
        entry.val_rouge_l = val_rouge_l(model, vocab, val, cfg);
        entry.improved = entry.val_rouge_l > st.best_val_rouge_l;
        if (entry.improved) {
            st.best_val_rouge_l = entry.val_rouge_l;
            st.epochs_since_best = 0;
            result.best_epoch = st.epoch;
            save_checkpoint(result.checkpoint, cfg, model, vocab, st.epoch, entry.val_rouge_l);
        } else {
            ++st.epochs_since_best;
        }
        std::ostringstream rs;
        rs << rng;
        st.rng_state = rs.str();
        result.log.push_back(entry);
        log_file << nlohmann::json{{"epoch", entry.epoch},          {"train_loss", entry.train_loss},
                                   {"val_rouge_l", entry.val_rouge_l}, {"lr", entry.last_lr},
                                   {"improved", entry.improved},       {"global_step", st.global_step}}
                        .dump()
                 << '\n';
        spdlog::info("epoch {} loss {:.4f} val ROUGE-L {:.4f}{}", entry.epoch, entry.train_loss, entry.val_rouge_l,
                     entry.improved ? " (best)" : "");
        if (hooks.on_epoch) hooks.on_epoch(entry);
        if (st.epochs_since_best >= cfg.patience) {
            result.stopped_early = st.epoch < cfg.max_epochs;
            spdlog::info("no val improvement for {} epochs; stopping", st.epochs_since_best);
            break;
        }
    }
    if (st.epoch > cfg.max_epochs) st.epoch = cfg.max_epochs;
    return result;
}

}  // namespace rsic::harness
