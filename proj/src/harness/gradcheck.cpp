#include "rsic/harness/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "rsic/errors.hpp"

namespace rsic::harness {

model::ModelConfig gradcheck_model_config(std::uint64_t seed) {
    model::ModelConfig cfg;
    cfg.encoder.backbone.name = "toy";
    cfg.encoder.backbone.out_channels = 8;
    cfg.encoder.patch_count = 4;
    cfg.encoder.feature_width = 8;
    cfg.encoder.layers = 1;
    cfg.encoder.heads = 2;
    cfg.decoder.layers = 1;
    cfg.decoder.heads = 2;
    cfg.decoder.width = 8;
    cfg.decoder.vocab_size = 264;
    cfg.decoder.max_len = 6;
    cfg.seed = seed;
    return cfg;
}

namespace {

std::string prefix_for(const std::string& part) {
    if (part == "encoder" || part == "decoder") return part + ".";
    return part;
}

}  // namespace

GradCheckReport grad_check(model::CaptionModel& model, const GradCheckOptions& opts) {
    const std::string prefix = prefix_for(opts.part);
    std::vector<std::string> names;
    for (const auto& [name, _] : model.params().items())
        if (name.rfind(prefix, 0) == 0) names.push_back(name);
    GradCheckReport report;
    if (names.empty()) {
        spdlog::info("gradcheck: no parameters under \"{}\"; nothing to check", prefix);
        return report;
    }

    // Fixed batch: two 16x16 images and two short captions.
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> u(0, 1);
    nn::Tensor images({2, 16, 16, 3});
    for (double& v : images.values()) v = u(rng);
    const std::size_t len = std::min<std::size_t>(5, model.config().decoder.max_len);
    std::uniform_int_distribution<corpus::TokenId> tok(4, static_cast<corpus::TokenId>(model.config().decoder.vocab_size - 1));
    corpus::TokenBatch batch;
    batch.rows = 2;
    batch.cols = len;
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < len; ++c) {
            corpus::TokenId id = c == 0 ? corpus::Vocabulary::kStart : c + 1 == len - r ? corpus::Vocabulary::kEnd : tok(rng);
            if (c + 1 > len - r) id = corpus::Vocabulary::kPad;
            batch.ids.push_back(id);
            batch.mask.push_back(c + 1 <= len - r);
        }
    }
    if (opts.jitter > 0) {
        std::normal_distribution<double> noise(0, opts.jitter);
        for (const auto& name : names)
            for (double& v : model.params().at(name).value.values()) v += noise(rng);
    }
    auto loss = [&](nn::Graph& g) { return model.loss(g, images, batch); };

    model.params().zero_grad();
    {
        nn::Graph g;
        g.backward(loss(g));
    }
    if (opts.tamper) opts.tamper(model.params());

    for (const auto& name : names) {
        nn::Parameter& p = model.params().at(name);
        std::vector<std::size_t> idx(p.value.size());
        std::iota(idx.begin(), idx.end(), 0);
        if (idx.size() > opts.max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opts.max_entries);
            std::sort(idx.begin(), idx.end());
        }
        double diff = 0, na = 0, nn_ = 0;
        for (std::size_t i : idx) {
            const double orig = p.value[i];
            p.value[i] = orig + opts.step;
            double plus, minus;
            {
                nn::Graph g(nn::Graph::Mode::inference);
                plus = loss(g).value()[0];
            }
            p.value[i] = orig - opts.step;
            {
                nn::Graph g(nn::Graph::Mode::inference);
                minus = loss(g).value()[0];
            }
            p.value[i] = orig;
            const double numeric = (plus - minus) / (2 * opts.step);
            const double analytic = p.grad[i];
            diff += (analytic - numeric) * (analytic - numeric);
            na += analytic * analytic;
            nn_ += numeric * numeric;
        }
        const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn_), 1e-10});
        report.tensors.push_back({name, idx.size(), rel});
        report.max_relative_error = std::max(report.max_relative_error, rel);
    }
    std::sort(report.tensors.begin(), report.tensors.end(),
              [](const TensorCheck& a, const TensorCheck& b) { return a.relative_error > b.relative_error; });
    report.passed = report.max_relative_error < opts.tolerance;
    if (!report.passed) {
        std::string worst;
        for (std::size_t i = 0; i < std::min<std::size_t>(5, report.tensors.size()); ++i)
            worst += " " + report.tensors[i].name + "=" + std::to_string(report.tensors[i].relative_error);
        spdlog::warn("gradcheck failed (tolerance {}):{}", opts.tolerance, worst);
    }
    return report;
}

GradCheckReport grad_check(const GradCheckOptions& opts) {
    model::CaptionModel model(gradcheck_model_config(opts.seed));
    return grad_check(model, opts);
}

}  // namespace rsic::harness
