#include <numeric>

#include <spdlog/spdlog.h>

#include "rsic/errors.hpp"
#include "rsic/model/backbone.hpp"
#include "rsic/model/layers.hpp"
#include "rsic/nn/archive.hpp"
#include "rsic/nn/ops.hpp"

// Reduced-depth stand-ins for the backbone families. Every entry downsamples by 8
// and keeps the characteristic block of its family.
namespace rsic::model {

namespace ops = nn::ops;
using nn::ParameterStore;
using nn::Rng;

namespace {

enum class Act { relu, hardswish, gelu, none };

Var activate(Var x, Act act) {
    switch (act) {
        case Act::relu:
            return ops::relu(x);
        case Act::hardswish:
            return ops::hardswish(x);
        case Act::gelu:
            return ops::gelu(x);
        case Act::none:
            break;
    }
    return x;
}

class ToyBackbone : public Backbone {
  public:
    ToyBackbone(std::size_t c, ParameterStore& s, const std::string& p, Rng& rng) : Backbone("toy", c) {
        c1_ = Conv2d::create(s, p + "conv1", 3, 3, c / 4, 2, 1, rng);
        c2_ = Conv2d::create(s, p + "conv2", 3, c / 4, c / 2, 2, 1, rng);
        c3_ = Conv2d::create(s, p + "conv3", 3, c / 2, c, 2, 1, rng);
    }
    Var forward(Graph& g, Var x) const override {
        return ops::relu(c3_(g, ops::relu(c2_(g, ops::relu(c1_(g, x))))));
    }

  private:
    Conv2d c1_, c2_, c3_;
};

class PlainBackbone : public Backbone {
  public:
    // vggnet: two 3x3 convs per stage; alexnet: a wide 5x5 stem then single convs.
    PlainBackbone(const std::string& name, std::size_t c, ParameterStore& s, const std::string& p, Rng& rng)
        : Backbone(name, c) {
        if (name == "alexnet") {
            convs_.push_back(Conv2d::create(s, p + "conv1", 5, 3, c / 4, 2, 2, rng));
            convs_.push_back(Conv2d::create(s, p + "conv2", 3, c / 4, c / 2, 2, 1, rng));
            convs_.push_back(Conv2d::create(s, p + "conv3", 3, c / 2, c, 2, 1, rng));
            convs_.push_back(Conv2d::create(s, p + "conv4", 3, c, c, 1, 1, rng));
            return;
        }
        std::size_t cin = 3;
        const std::size_t widths[] = {c / 4, c / 2, c};
        for (std::size_t stage = 0; stage < 3; ++stage) {
            const std::string n = p + "stage" + std::to_string(stage + 1);
            convs_.push_back(Conv2d::create(s, n + ".conv1", 3, cin, widths[stage], 1, 1, rng));
            convs_.push_back(Conv2d::create(s, n + ".conv2", 3, widths[stage], widths[stage], 2, 1, rng));
            cin = widths[stage];
        }
    }
    Var forward(Graph& g, Var x) const override {
        for (const auto& conv : convs_) x = ops::relu(conv(g, x));
        return x;
    }

  private:
    std::vector<Conv2d> convs_;
};

// Residual families: basic block (resnet, wide_resnet) or grouped bottleneck (resnext, regnet).
class ResidualBackbone : public Backbone {
  public:
    ResidualBackbone(const std::string& name, std::size_t c, ParameterStore& s, const std::string& p, Rng& rng)
        : Backbone(name, c) {
        stem_ = Conv2d::create(s, p + "stem", 3, 3, c / 4, 2, 1, rng);
        blocks_.push_back(make_block(name, c / 4, c / 2, s, p + "block1", rng));
        blocks_.push_back(make_block(name, c / 2, c, s, p + "block2", rng));
    }
    Var forward(Graph& g, Var x) const override {
        x = ops::relu(stem_(g, x));
        for (const auto& b : blocks_) {
            Var y = x;
            for (std::size_t i = 0; i < b.body.size(); ++i) {
                y = b.body[i](g, y);
                if (i + 1 < b.body.size()) y = ops::relu(y);
            }
            x = ops::relu(ops::add(y, b.shortcut(g, x)));
        }
        return x;
    }

  private:
    struct Block {
        std::vector<Conv2d> body;
        Conv2d shortcut;
    };

    static Block make_block(const std::string& name, std::size_t cin, std::size_t cout, ParameterStore& s,
                            const std::string& p, Rng& rng) {
        Block b;
        if (name == "resnet" || name == "wide_resnet") {
            const std::size_t mid = name == "wide_resnet" ? 2 * cout : cout;
            b.body.push_back(Conv2d::create(s, p + ".conv1", 3, cin, mid, 2, 1, rng));
            b.body.push_back(Conv2d::create(s, p + ".conv2", 3, mid, cout, 1, 1, rng));
        } else {
            const std::size_t mid = cout;
            const std::size_t groups = name == "resnext" ? 4 : std::max<std::size_t>(1, std::gcd(mid, mid / 8));
            b.body.push_back(Conv2d::create(s, p + ".reduce", 1, cin, mid, 1, 0, rng));
            b.body.push_back(Conv2d::create(s, p + ".grouped", 3, mid, mid, 2, 1, rng, groups));
            b.body.push_back(Conv2d::create(s, p + ".expand", 1, mid, cout, 1, 0, rng));
        }
        b.shortcut = Conv2d::create(s, p + ".shortcut", 1, cin, cout, 2, 0, rng);
        return b;
    }

    Conv2d stem_;
    std::vector<Block> blocks_;
};

class DenseBackbone : public Backbone {
  public:
    DenseBackbone(std::size_t c, ParameterStore& s, const std::string& p, Rng& rng) : Backbone("densenet", c) {
        const std::size_t growth = c / 8;
        stem_ = Conv2d::create(s, p + "stem", 3, 3, c / 4, 2, 1, rng);
        std::size_t width = c / 4;
        const std::size_t targets[] = {c / 2, c};
        for (std::size_t stage = 0; stage < 2; ++stage) {
            const std::string n = p + "dense" + std::to_string(stage + 1);
            Stage st;
            for (std::size_t l = 0; l < 2; ++l) {
                st.layers.push_back(Conv2d::create(s, n + ".layer" + std::to_string(l + 1), 3, width, growth, 1, 1, rng));
                width += growth;
            }
            st.transition = Conv2d::create(s, n + ".transition", 3, width, targets[stage], 2, 1, rng);
            width = targets[stage];
            stages_.push_back(std::move(st));
        }
    }
    Var forward(Graph& g, Var x) const override {
        x = ops::relu(stem_(g, x));
        for (const auto& st : stages_) {
            for (const auto& layer : st.layers) x = ops::concat_last({x, ops::relu(layer(g, x))});
            x = ops::relu(st.transition(g, x));
        }
        return x;
    }

  private:
    struct Stage {
        std::vector<Conv2d> layers;
        Conv2d transition;
    };
    Conv2d stem_;
    std::vector<Stage> stages_;
};

// googlenet: 1x1 / 3x3 / 5x5 branches; inceptionnet: factorized 3x3 chains.
class InceptionBackbone : public Backbone {
  public:
    InceptionBackbone(const std::string& name, std::size_t c, ParameterStore& s, const std::string& p, Rng& rng)
        : Backbone(name, c) {
        stem1_ = Conv2d::create(s, p + "stem1", 3, 3, c / 4, 2, 1, rng);
        stem2_ = Conv2d::create(s, p + "stem2", 3, c / 4, c / 2, 2, 1, rng);
        reduce_ = Conv2d::create(s, p + "reduce", 3, c / 2, c / 2, 2, 1, rng);
        const std::size_t in = c / 2;
        const std::string m = p + "mixed";
        if (name == "googlenet") {
            branches_.push_back({Conv2d::create(s, m + ".b1", 1, in, c / 2, 1, 0, rng)});
            branches_.push_back({Conv2d::create(s, m + ".b2", 3, in, c / 4, 1, 1, rng)});
            branches_.push_back({Conv2d::create(s, m + ".b3", 5, in, c / 4, 1, 2, rng)});
        } else {
            branches_.push_back({Conv2d::create(s, m + ".b1", 1, in, c / 4, 1, 0, rng)});
            branches_.push_back({Conv2d::create(s, m + ".b2a", 1, in, c / 4, 1, 0, rng),
                                 Conv2d::create(s, m + ".b2b", 3, c / 4, c / 4, 1, 1, rng)});
            branches_.push_back({Conv2d::create(s, m + ".b3a", 1, in, c / 4, 1, 0, rng),
                                 Conv2d::create(s, m + ".b3b", 3, c / 4, c / 2, 1, 1, rng),
                                 Conv2d::create(s, m + ".b3c", 3, c / 2, c / 2, 1, 1, rng)});
        }
    }
    Var forward(Graph& g, Var x) const override {
        x = ops::relu(reduce_(g, ops::relu(stem2_(g, ops::relu(stem1_(g, x))))));
        std::vector<Var> outs;
        for (const auto& branch : branches_) {
            Var y = x;
            for (const auto& conv : branch) y = ops::relu(conv(g, y));
            outs.push_back(y);
        }
        return ops::concat_last(outs);
    }

  private:
    Conv2d stem1_, stem2_, reduce_;
    std::vector<std::vector<Conv2d>> branches_;
};

class InvertedResidualBackbone : public Backbone {
  public:
    InvertedResidualBackbone(const std::string& name, std::size_t c, ParameterStore& s, const std::string& p,
                             Rng& rng)
        : Backbone(name, c), act_(name == "mobilenetv3" ? Act::hardswish : Act::relu) {
        stem_ = Conv2d::create(s, p + "stem", 3, 3, c / 4, 2, 1, rng);
        blocks_.push_back(make_block(c / 4, c / 2, 2, s, p + "block1", rng));
        blocks_.push_back(make_block(c / 2, c, 2, s, p + "block2", rng));
        blocks_.push_back(make_block(c, c, 1, s, p + "block3", rng));
    }
    Var forward(Graph& g, Var x) const override {
        x = activate(stem_(g, x), act_);
        for (const auto& b : blocks_) {
            Var y = activate(b.expand(g, x), act_);
            y = activate(b.depthwise(g, y), act_);
            y = b.project(g, y);
            x = b.residual ? ops::add(x, y) : y;
        }
        return x;
    }

  private:
    struct Block {
        Conv2d expand, depthwise, project;
        bool residual = false;
    };
    static Block make_block(std::size_t cin, std::size_t cout, std::size_t stride, ParameterStore& s,
                            const std::string& p, Rng& rng) {
        const std::size_t hidden = 4 * cin;
        return {Conv2d::create(s, p + ".expand", 1, cin, hidden, 1, 0, rng),
                Conv2d::create(s, p + ".depthwise", 3, hidden, hidden, stride, 1, rng, hidden),
                Conv2d::create(s, p + ".project", 1, hidden, cout, 1, 0, rng), stride == 1 && cin == cout};
    }

    Act act_;
    Conv2d stem_;
    std::vector<Block> blocks_;
};

class ConvNextBackbone : public Backbone {
  public:
    ConvNextBackbone(std::size_t c, ParameterStore& s, const std::string& p, Rng& rng) : Backbone("convnext", c) {
        const std::size_t widths[] = {c / 4, c / 2, c};
        std::size_t cin = 3;
        for (std::size_t stage = 0; stage < 3; ++stage) {
            const std::string n = p + "stage" + std::to_string(stage + 1);
            const std::size_t w = widths[stage];
            Stage st;
            st.down = Conv2d::create(s, n + ".down", 2, cin, w, 2, 0, rng);
            st.down_norm = LayerNorm::create(s, n + ".down_norm", w, rng);
            st.dw = Conv2d::create(s, n + ".dw", 7, w, w, 1, 3, rng, w);
            st.norm = LayerNorm::create(s, n + ".norm", w, rng);
            st.mlp = FeedForward::create(s, n + ".mlp", w, 4 * w, rng);
            stages_.push_back(std::move(st));
            cin = w;
        }
    }
    Var forward(Graph& g, Var x) const override {
        for (const auto& st : stages_) {
            x = st.down_norm(g, st.down(g, x));
            x = ops::add(x, st.mlp(g, st.norm(g, st.dw(g, x))));
        }
        return x;
    }

  private:
    struct Stage {
        Conv2d down;
        LayerNorm down_norm;
        Conv2d dw;
        LayerNorm norm;
        FeedForward mlp;
    };
    std::vector<Stage> stages_;
};

template <typename T>
BackboneFactory simple_factory() {
    return [](std::size_t c, ParameterStore& s, const std::string& p, Rng& rng) -> std::unique_ptr<Backbone> {
        return std::make_unique<T>(c, s, p, rng);
    };
}

template <typename T>
BackboneFactory named_factory(const std::string& name) {
    return [name](std::size_t c, ParameterStore& s, const std::string& p, Rng& rng) -> std::unique_ptr<Backbone> {
        return std::make_unique<T>(name, c, s, p, rng);
    };
}

}  // namespace

BackboneSpec parse_backbone_spec(const std::string& text) {
    BackboneSpec spec;
    const auto colon = text.find(':');
    spec.name = text.substr(0, colon);
    if (spec.name.empty()) throw ConfigError("empty backbone name in \"" + text + "\"");
    if (colon != std::string::npos) {
        const std::string opt = text.substr(colon + 1);
        const std::string key = "weights=";
        if (opt.rfind(key, 0) != 0 || opt.size() == key.size()) {
            throw ConfigError("backbone option must be weights=PATH, got \"" + opt + "\"");
        }
        spec.weights_path = opt.substr(key.size());
    }
    return spec;
}

std::string format_backbone_spec(const BackboneSpec& spec) {
    return spec.weights_path ? spec.name + ":weights=" + spec.weights_path->string() : spec.name;
}

BackboneRegistry& BackboneRegistry::global() {
    static BackboneRegistry registry = [] {
        BackboneRegistry r;
        r.add("toy", simple_factory<ToyBackbone>(), 32);
        for (const char* n : {"resnet", "wide_resnet", "resnext", "regnet"})
            r.add(n, named_factory<ResidualBackbone>(n), 32);
        for (const char* n : {"vggnet", "alexnet"}) r.add(n, named_factory<PlainBackbone>(n), 32);
        r.add("densenet", simple_factory<DenseBackbone>(), 32);
        for (const char* n : {"googlenet", "inceptionnet"}) r.add(n, named_factory<InceptionBackbone>(n), 32);
        for (const char* n : {"mobilenetv2", "mobilenetv3"}) r.add(n, named_factory<InvertedResidualBackbone>(n), 32);
        r.add("convnext", simple_factory<ConvNextBackbone>(), 32);
        return r;
    }();
    return registry;
}

void BackboneRegistry::add(const std::string& name, BackboneFactory factory, std::size_t default_channels) {
    if (!entries_.emplace(name, Entry{std::move(factory), default_channels}).second) {
        throw ConfigError("backbone \"" + name + "\" registered twice");
    }
}

std::vector<std::string> BackboneRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

std::size_t BackboneRegistry::default_channels(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown backbone \"" + name + "\"");
    return it->second.default_channels;
}

std::unique_ptr<Backbone> BackboneRegistry::instantiate(const BackboneSpec& spec, ParameterStore& store,
                                                        const std::string& prefix, Rng& rng) const {
    auto it = entries_.find(spec.name);
    if (it == entries_.end()) {
        std::string known;
        for (const auto& n : names()) known += (known.empty() ? "" : ", ") + n;
        throw ConfigError("unknown backbone \"" + spec.name + "\" (registered: " + known + ")");
    }
    const std::size_t channels = spec.out_channels ? spec.out_channels : it->second.default_channels;
    if (channels % 8 != 0) {
        throw ConfigError("backbone out_channels must be a multiple of 8, got " + std::to_string(channels));
    }
    auto backbone = it->second.factory(channels, store, prefix, rng);
    if (spec.weights_path) {
        nn::load_into(store, nn::load_archive(*spec.weights_path), prefix);
        spdlog::info("loaded {} weights from {}", spec.name, spec.weights_path->string());
    }
    return backbone;
}

}  // namespace rsic::model
