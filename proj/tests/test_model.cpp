#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "rsic/errors.hpp"
#include "rsic/model/caption_model.hpp"
#include "rsic/nn/archive.hpp"
#include "rsic/nn/ops.hpp"
#include "rsic/nn/optim.hpp"
#include "support/fd.hpp"

using namespace rsic;
using namespace rsic::model;
using nn::Shape;
using nn::Tensor;

namespace {

EncoderConfig small_encoder(Ablation a = Ablation::MHT) {
    EncoderConfig cfg;
    cfg.backbone.name = "toy";
    cfg.backbone.out_channels = 16;
    cfg.feature_width = 16;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.ablation = a;
    return cfg;
}

DecoderConfig small_decoder(std::size_t vocab = 11, std::size_t width = 16) {
    DecoderConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.width = width;
    cfg.vocab_size = vocab;
    cfg.max_len = 8;
    cfg.encoder_width = 12;
    return cfg;
}

Tensor random_images(std::size_t b, std::size_t side, std::uint64_t seed) {
    nn::Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor t({b, side, side, 3});
    for (double& v : t.values()) v = u(rng);
    return t;
}

double max_row_error(const Tensor& probs) {
    const std::size_t cols = probs.shape().back();
    double worst = 0;
    for (std::size_t r = 0; r < probs.size() / cols; ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < cols; ++c) sum += probs[r * cols + c];
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return worst;
}

}  // namespace

TEST_CASE("every registered backbone yields the (B, 49, C) contract on 224 inputs") {
    const Tensor images = random_images(2, 224, 1);
    const auto names = BackboneRegistry::global().names();
    CHECK(names.size() == 13);
    for (const auto& name : names) {
        CAPTURE(name);
        nn::ParameterStore store;
        nn::Rng rng(3);
        EncoderConfig cfg = small_encoder();
        cfg.backbone = BackboneSpec{name, 0, std::nullopt};
        HybridEncoder enc(cfg, store, rng);
        Graph g(Graph::Mode::inference);
        const FeatureGrid raw = enc.extract_features(g, g.constant(images));
        CHECK(raw.data.shape() == Shape{2, 49, enc.backbone_channels()});
        CHECK(raw.data.value().all_finite());
    }
}

TEST_CASE("stand-ins are deterministic under a fixed seed") {
    const Tensor images = random_images(1, 32, 2);
    auto run = [&] {
        nn::ParameterStore store;
        nn::Rng rng(42);
        EncoderConfig cfg = small_encoder();
        cfg.backbone.name = "resnext";
        HybridEncoder enc(cfg, store, rng);
        Graph g(Graph::Mode::inference);
        return enc.forward(g, g.constant(images)).data.value();
    };
    CHECK(run() == run());
}

TEST_CASE("unknown backbone and bad configs are configuration errors") {
    nn::ParameterStore store;
    nn::Rng rng(1);
    EncoderConfig cfg = small_encoder();
    cfg.backbone.name = "lenet";
    CHECK_THROWS_AS(HybridEncoder(cfg, store, rng), ConfigError);
    cfg = small_encoder();
    cfg.heads = 5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_encoder();
    cfg.patch_count = 50;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK(parse_backbone_spec("convnext:weights=/tmp/w.bin").weights_path->string() == "/tmp/w.bin");
    CHECK_THROWS_AS(parse_backbone_spec("convnext:weight=x"), ConfigError);
}

TEST_CASE("backbone weights load strictly by name") {
    nn::Rng rng(1);
    nn::ParameterStore src;
    EncoderConfig cfg = small_encoder();
    cfg.backbone.name = "convnext";
    HybridEncoder enc(cfg, src, rng);
    const auto good = std::filesystem::temp_directory_path() / "rsic_convnext_ok.bin";
    nn::save_archive(good, nn::to_archive(src, "encoder.backbone."));

    EncoderConfig with = cfg;
    with.backbone.weights_path = good;
    nn::ParameterStore dst;
    nn::Rng other(99);
    HybridEncoder loaded(with, dst, other);
    CHECK(dst.at("encoder.backbone.stage1.dw.w").value == src.at("encoder.backbone.stage1.dw.w").value);

    auto archive = nn::to_archive(src, "encoder.backbone.");
    archive["stage2.dw.w"] = Tensor({1, 1, 1, 1});
    const auto bad = std::filesystem::temp_directory_path() / "rsic_convnext_bad.bin";
    nn::save_archive(bad, archive);
    with.backbone.weights_path = bad;
    nn::ParameterStore dst2;
    try {
        HybridEncoder broken(with, dst2, other);
        FAIL("expected a mismatch");
    } catch (const nn::ArchiveMismatch& e) {
        REQUIRE(e.offenders().size() == 1);
        CHECK(e.offenders()[0].find("stage2.dw.w") != std::string::npos);
    }
    std::filesystem::remove(good);
    std::filesystem::remove(bad);
}

TEST_CASE("zero image through the toy backbone with zero bias gives a zero grid") {
    nn::ParameterStore store;
    nn::Rng rng(1);
    HybridEncoder enc(small_encoder(), store, rng);
    Graph g(Graph::Mode::inference);
    const FeatureGrid raw = enc.extract_features(g, g.constant(Tensor({2, 224, 224, 3})));
    for (double v : raw.data.value().values()) CHECK(v == 0.0);
}

TEST_CASE("a native 7x7 feature map passes through pooling unchanged") {
    nn::ParameterStore store;
    nn::Rng rng(1);
    HybridEncoder enc(small_encoder(), store, rng);
    const Tensor images = random_images(1, 56, 4);
    Graph g(Graph::Mode::inference);
    const Tensor fmap = enc.backbone().forward(g, g.constant(images)).value();
    REQUIRE(fmap.shape() == Shape{1, 7, 7, 16});
    const Tensor raw = enc.extract_features(g, g.constant(images)).data.value();
    CHECK(raw.storage() == fmap.storage());
}

TEST_CASE("projection is a shared per-patch affine map") {
    nn::ParameterStore store;
    nn::Rng rng(1);
    EncoderConfig cfg = small_encoder();
    cfg.feature_width = 768;
    cfg.heads = 16;
    cfg.layers = 1;
    HybridEncoder enc(cfg, store, rng);
    nn::Rng data_rng(8);
    const Tensor raw = test::random_tensor({2, 49, 16}, data_rng);
    Graph g(Graph::Mode::inference);
    const Tensor projected = enc.project_features(g, {g.constant(raw), Provenance::raw_backbone}).data.value();
    CHECK(projected.shape() == Shape{2, 49, 768});

    // Reverse the patch order before projecting: rows come out reversed.
    Tensor reversed(raw.shape());
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t p = 0; p < 49; ++p)
            for (std::size_t c = 0; c < 16; ++c) reversed.at({b, 48 - p, c}) = raw.at({b, p, c});
    const Tensor proj_rev = enc.project_features(g, {g.constant(reversed), Provenance::raw_backbone}).data.value();
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t p = 0; p < 49; ++p)
            for (std::size_t c = 0; c < 768; c += 97) CHECK(proj_rev.at({b, 48 - p, c}) == projected.at({b, p, c}));
}

TEST_CASE("identity projection reproduces its input") {
    nn::ParameterStore store;
    nn::Rng rng(1);
    HybridEncoder enc(small_encoder(), store, rng);
    store.at("encoder.proj.w").value = Tensor({16, 16});
    for (std::size_t i = 0; i < 16; ++i) store.at("encoder.proj.w").value.at({i, i}) = 1.0;
    nn::Rng data_rng(2);
    const Tensor raw = test::random_tensor({2, 49, 16}, data_rng);
    Graph g(Graph::Mode::inference);
    CHECK(enc.project_features(g, {g.constant(raw), Provenance::raw_backbone}).data.value() == raw);
}

TEST_CASE("patch embeddings: zero table is identity, no CLS slot, shared across batches") {
    nn::ParameterStore store;
    nn::Rng rng(1);
    HybridEncoder enc(small_encoder(), store, rng);
    nn::Rng data_rng(2);
    const Tensor x = test::random_tensor({2, 49, 16}, data_rng);
    const Tensor y = test::random_tensor({3, 49, 16}, data_rng);
    Graph g(Graph::Mode::inference);
    const Tensor ex = enc.add_patch_embeddings(g, {g.constant(x), Provenance::projected}).data.value();
    const Tensor ey = enc.add_patch_embeddings(g, {g.constant(y), Provenance::projected}).data.value();
    CHECK(ex.shape() == x.shape());
    const Tensor& table = enc.patch_embeddings()->value;
    for (std::size_t p = 0; p < 49; ++p)
        for (std::size_t c = 0; c < 16; ++c) {
            CHECK(ex.at({1, p, c}) - x.at({1, p, c}) == doctest::Approx(table.at({p, c})).epsilon(1e-12));
            CHECK(ey.at({2, p, c}) - y.at({2, p, c}) == doctest::Approx(table.at({p, c})).epsilon(1e-12));
        }
    store.at("encoder.patch_embed").value.fill(0.0);
    Graph g2(Graph::Mode::inference);
    CHECK(enc.add_patch_embeddings(g2, {g2.constant(x), Provenance::projected}).data.value() == x);
}

TEST_CASE("WOT skips the transformer stage bit for bit") {
    nn::ParameterStore store;
    nn::Rng rng(1);
    HybridEncoder enc(small_encoder(Ablation::WOT), store, rng);
    CHECK(enc.patch_embeddings() == nullptr);
    nn::Rng data_rng(2);
    const Tensor x = test::random_tensor({2, 49, 16}, data_rng);
    Graph g(Graph::Mode::inference);
    const FeatureGrid out = enc.encode(g, {g.constant(x), Provenance::projected});
    CHECK(out.data.value() == x);
    const Tensor images = random_images(2, 56, 3);
    const Tensor full = enc.forward(g, g.constant(images)).data.value();
    const Tensor projected =
        enc.project_features(g, enc.extract_features(g, g.constant(images))).data.value();
    CHECK(full == projected);
}

TEST_CASE("MHT and SHT instantiate the configured stack") {
    EncoderConfig cfg;
    cfg.backbone.name = "toy";
    cfg.feature_width = 32;
    CHECK(cfg.layers == 6);
    CHECK(cfg.heads == 16);
    nn::ParameterStore store;
    nn::Rng rng(1);
    HybridEncoder enc(cfg, store, rng);
    CHECK(store.contains("encoder.layer5.attn.q.w"));
    CHECK_FALSE(store.contains("encoder.layer6.attn.q.w"));
    Graph g(Graph::Mode::inference);
    AttentionTrace trace;
    const FeatureGrid out = enc.forward(g, g.constant(random_images(2, 56, 5)), &trace);
    CHECK(out.data.shape() == Shape{2, 49, 32});
    REQUIRE(trace.layers.size() == 6);
    for (const auto& probs : trace.layers) {
        CHECK(probs.shape() == Shape{2, 16, 49, 49});
        CHECK(max_row_error(probs) < 1e-6);
    }

    cfg.ablation = Ablation::SHT;
    CHECK(cfg.effective_heads() == 1);
    nn::ParameterStore store2;
    HybridEncoder sht(cfg, store2, rng);
    AttentionTrace t2;
    sht.forward(g, g.constant(random_images(1, 56, 6)), &t2);
    CHECK(t2.layers.at(0).shape() == Shape{1, 1, 49, 49});
}

TEST_CASE("single-patch encoder attends with weight exactly one") {
    EncoderConfig cfg = small_encoder();
    cfg.patch_count = 1;
    nn::ParameterStore store;
    nn::Rng rng(1);
    HybridEncoder enc(cfg, store, rng);
    Graph g(Graph::Mode::inference);
    AttentionTrace trace;
    enc.forward(g, g.constant(random_images(2, 32, 1)), &trace);
    for (const auto& probs : trace.layers)
        for (double p : probs.values()) CHECK(p == 1.0);
}

TEST_CASE("non-finite activations name the layer") {
    nn::ParameterStore store;
    nn::Rng rng(1);
    HybridEncoder enc(small_encoder(), store, rng);
    store.at("encoder.layer1.mlp.fc2.b").value[0] = std::numeric_limits<double>::quiet_NaN();
    Graph g(Graph::Mode::inference);
    try {
        enc.forward(g, g.constant(random_images(1, 32, 1)));
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(e.layer() == 1);
    }
}

TEST_CASE("teacher pairs shift by one") {
    corpus::TokenSequence s{{0, 7, 8, 2}, {1, 1, 1, 1}, 4};
    TeacherPair p = make_teacher_pair(s, 0, 2);
    CHECK(p.input == std::vector<TokenId>{0, 7, 8});
    CHECK(p.target == std::vector<TokenId>{7, 8, 2});
    corpus::TokenSequence empty{{0, 2}, {1, 1}, 2};
    p = make_teacher_pair(empty, 0, 2);
    CHECK(p.input == std::vector<TokenId>{0});
    CHECK(p.target == std::vector<TokenId>{2});
    corpus::TokenSequence padded{{0, 7, 2, 1}, {1, 1, 1, 0}, 4};
    p = make_teacher_pair(padded, 0, 2);
    CHECK(p.mask == std::vector<std::uint8_t>{1, 1, 0});
    CHECK_THROWS(make_teacher_pair(corpus::TokenSequence{{7, 2}, {1, 1}, 2}, 0, 2));
    CHECK_THROWS(make_teacher_pair(corpus::TokenSequence{{0, 7}, {1, 1}, 2}, 0, 2));
}

struct DecoderFixture {
    DecoderConfig cfg = small_decoder();
    nn::ParameterStore store;
    nn::Rng rng{5};
    Decoder dec{cfg, store, rng};
    Tensor enc_a, enc_b;

    DecoderFixture() {
        nn::Rng r(17);
        enc_a = test::random_tensor({2, 4, 12}, r);
        enc_b = test::random_tensor({2, 4, 12}, r);
    }
    Tensor logits(const std::vector<TokenId>& ids, std::size_t len, const Tensor& enc,
                  const DecoderOptions& opt = {}) {
        Graph g(Graph::Mode::inference);
        return dec.forward(g, ids, ids.size() / len, len, g.constant(enc), opt).value();
    }
};

TEST_CASE("decoder logits shape") {
    DecoderConfig cfg = small_decoder(480);
    nn::ParameterStore store;
    nn::Rng rng(1);
    Decoder dec(cfg, store, rng);
    nn::Rng r(2);
    Graph g(Graph::Mode::inference);
    const std::vector<TokenId> ids = {0, 5, 9, 300, 479, 0, 1, 2, 3, 4};
    CHECK(dec.forward(g, ids, 2, 5, g.constant(test::random_tensor({2, 4, 12}, r))).shape() == Shape{2, 5, 480});
}

TEST_CASE("decoder causality is bitwise") {
    DecoderFixture f;
    const std::vector<TokenId> base = {0, 4, 5, 6, 7, 0, 8, 9, 10, 3};
    const Tensor ref = f.logits(base, 5, f.enc_a);
    for (std::size_t j = 0; j < 5; ++j) {
        std::vector<TokenId> changed = base;
        changed[j] = (changed[j] + 3) % 11;
        changed[5 + j] = (changed[5 + j] + 5) % 11;
        const Tensor out = f.logits(changed, 5, f.enc_a);
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < j; ++i)
                for (std::size_t v = 0; v < 11; ++v) CHECK(out.at({b, i, v}) == ref.at({b, i, v}));
    }
}

TEST_CASE("disabling cross attention makes logits image independent") {
    DecoderFixture f;
    const std::vector<TokenId> ids = {0, 4, 5, 0, 6, 7};
    DecoderOptions off;
    off.cross_attention = false;
    CHECK(f.logits(ids, 3, f.enc_a, off) == f.logits(ids, 3, f.enc_b, off));
    CHECK_FALSE(f.logits(ids, 3, f.enc_a) == f.logits(ids, 3, f.enc_b));
}

TEST_CASE("padding invariance and attention row sums") {
    DecoderFixture f;
    const std::vector<TokenId> short_ids = {0, 4, 5, 0, 6, 7};
    const std::vector<TokenId> padded = {0, 4, 5, 1, 1, 0, 6, 7, 1, 1};
    std::vector<Tensor> cross, self;
    DecoderOptions opt;
    opt.cross_probs = &cross;
    opt.self_probs = &self;
    const Tensor a = f.logits(short_ids, 3, f.enc_a);
    const Tensor b = f.logits(padded, 5, f.enc_a, opt);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t v = 0; v < 11; ++v) CHECK(std::abs(a.at({r, i, v}) - b.at({r, i, v})) < 1e-6);
    REQUIRE(cross.size() == 2);
    for (const auto& p : cross) {
        CHECK(p.shape() == Shape{2, 2, 5, 4});
        CHECK(max_row_error(p) < 1e-6);
    }
    for (const auto& p : self) CHECK(max_row_error(p) < 1e-6);
}

TEST_CASE("positions beyond max_len are rejected") {
    DecoderFixture f;
    const std::vector<TokenId> ids(2 * 9, 4);
    CHECK_THROWS_AS(f.logits(ids, 9, f.enc_a), std::out_of_range);
    const std::vector<TokenId> bad = {0, 11, 0, 4};
    CHECK_THROWS_AS(f.logits(bad, 2, f.enc_a), std::out_of_range);
}

TEST_CASE("compute_loss: analytic values and mask semantics") {
    Graph g;
    const std::vector<TokenId> t = {3, 3};
    CHECK(compute_loss(g.constant(Tensor({1, 2, 7})), t, std::vector<std::uint8_t>{1, 1}).value()[0] ==
          doctest::Approx(std::log(7.0)).epsilon(1e-12));
    Tensor sharp({1, 2, 7});
    sharp.at({0, 0, 3}) = 60.0;
    sharp.at({0, 1, 3}) = 60.0;
    CHECK(compute_loss(g.constant(sharp), t, std::vector<std::uint8_t>{1, 1}).value()[0] < 1e-20);
    nn::Rng r(1);
    Tensor row = test::random_tensor({1, 1, 7}, r);
    Tensor two({1, 2, 7});
    for (std::size_t v = 0; v < 7; ++v) two[v] = two[7 + v] = row[v];
    const double single = compute_loss(g.constant(row), std::vector<TokenId>{3}, std::vector<std::uint8_t>{1}).value()[0];
    const double masked = compute_loss(g.constant(two), t, std::vector<std::uint8_t>{1, 0}).value()[0];
    CHECK(masked == doctest::Approx(single).epsilon(1e-14));
    CHECK_THROWS_AS(compute_loss(g.constant(two), t, std::vector<std::uint8_t>{0, 0}), std::invalid_argument);
}

TEST_CASE("decoder loss halves within 200 steps on a fixed batch") {
    DecoderConfig cfg = small_decoder(16, 32);
    cfg.heads = 4;
    nn::ParameterStore store;
    nn::Rng rng(3);
    Decoder dec(cfg, store, rng);
    nn::Rng r(4);
    const Tensor enc = test::random_tensor({8, 4, 12}, r);
    std::uniform_int_distribution<TokenId> tok(3, 15);
    std::vector<TokenId> input, target;
    for (int i = 0; i < 8 * 6; ++i) {
        input.push_back(tok(r));
        target.push_back(tok(r));
    }
    const std::vector<std::uint8_t> mask(target.size(), 1);
    nn::AdamW opt;
    double first = 0, last = 0;
    for (int step = 0; step < 200; ++step) {
        store.zero_grad();
        Graph g;
        Var loss = compute_loss(dec.forward(g, input, 8, 6, g.constant(enc)), target, mask);
        g.backward(loss);
        store.clip_grad_norm(1.0);
        opt.step(store, 3e-3);
        (step == 0 ? first : last) = loss.value()[0];
    }
    CHECK(first == doctest::Approx(std::log(16.0)).epsilon(0.05));
    CHECK(last <= 0.5 * first);
}

TEST_CASE("encoder and decoder gradients match finite differences") {
    ModelConfig cfg;
    cfg.encoder = small_encoder();
    cfg.encoder.patch_count = 4;
    cfg.encoder.backbone.out_channels = 8;
    cfg.encoder.feature_width = 8;
    cfg.encoder.heads = 2;
    cfg.decoder = small_decoder(9, 8);
    cfg.seed = 3;
    CaptionModel model(cfg);
    const Tensor images = random_images(2, 16, 7);
    corpus::TokenBatch batch;
    batch.rows = 2;
    batch.cols = 4;
    batch.ids = {0, 5, 6, 2, 0, 7, 2, 1};
    batch.mask = {1, 1, 1, 1, 1, 1, 1, 0};
    auto loss = [&](Graph& g) { return model.loss(g, images, batch); };
    for (const char* name : {"encoder.backbone.conv1.w", "encoder.proj.w", "encoder.patch_embed",
                             "encoder.layer0.attn.q.w", "encoder.layer1.mlp.fc1.w", "decoder.wte", "decoder.wpe",
                             "decoder.layer0.cross_attn.k.w", "decoder.layer1.self_attn.o.w", "decoder.ln_f.gamma"}) {
        CAPTURE(name);
        CHECK(test::fd_relative_error(model.params().at(name), loss) < 1e-4);
    }
}
