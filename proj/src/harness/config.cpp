#include "rsic/harness/config.hpp"

#include <cstdlib>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rsic/errors.hpp"
#include "rsic/util/csv.hpp"

namespace rsic::harness {

namespace pt = boost::property_tree;

std::optional<DatasetPreset> dataset_preset(const std::string& name) {
    std::string n;
    for (char c : name) n.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (n == "SYDNEY") return DatasetPreset{"SYDNEY", 480, 40, 7, 58};
    if (n == "UCM") return DatasetPreset{"UCM", 745, 44, 21, 210};
    if (n == "RSICD") return DatasetPreset{"RSICD", 5240, 68, 31, 1093};
    return std::nullopt;
}

void ExperimentConfig::validate() const {
    if (dataset.empty()) throw ConfigError("data.root is required");
    if (image_size < 8) throw ConfigError("data.image_size must be at least 8");
    encoder.validate();
    if (decoder.layers == 0 || decoder.heads == 0 || decoder.width == 0) throw ConfigError("decoder layers, heads and width must be positive");
    if (decoder.width % decoder.heads != 0) throw ConfigError("decoder.width must be divisible by decoder.heads");
    generation.validate();
    // lr 0 is allowed: it freezes the parameters while keeping the loop intact.
    if (!(learn_rate >= 0)) throw ConfigError("train.learn_rate must be non-negative");
    if (batch == 0 || max_epochs == 0 || patience == 0) throw ConfigError("train.batch, train.max_epochs and train.patience must be positive");
    if (!(warmup_frac > 0 && warmup_frac < 1)) throw ConfigError("train.warmup_frac must lie in (0, 1)");
    if (!(clip_norm > 0)) throw ConfigError("train.clip_norm must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
}

std::filesystem::path ExperimentConfig::dataset_root() const {
    if (dataset.is_absolute()) return dataset;
    if (const char* env = std::getenv("RSIC_DATA_ROOT"); env && *env) return std::filesystem::path(env) / dataset;
    return dataset;
}

std::string ExperimentConfig::resolved_dataset_name() const {
    if (!dataset_name.empty()) return dataset_name;
    auto p = dataset.lexically_normal();
    if (!p.has_filename()) p = p.parent_path();
    return p.filename().string();
}

namespace {

template <typename T>
T get(const pt::ptree& tree, const std::string& key, T fallback) {
    try {
        return tree.get<T>(key, fallback);
    } catch (const pt::ptree_bad_data&) {
        throw ConfigError("bad value for " + key + ": \"" + tree.get<std::string>(key) + "\"");
    }
}

std::string str(double v) { return util::exact_double(v); }

// Every key that may appear in the INI file, with its current value.
std::map<std::string, std::string> flatten(const ExperimentConfig& c) {
    return {
        {"data.root", c.dataset.string()},
        {"data.manifest", c.manifest},
        {"data.name", c.dataset_name},
        {"data.image_size", std::to_string(c.image_size)},
        {"encoder.backbone", model::format_backbone_spec(c.encoder.backbone)},
        {"encoder.backbone_channels", std::to_string(c.encoder.backbone.out_channels)},
        {"encoder.patch_count", std::to_string(c.encoder.patch_count)},
        {"encoder.feature_width", std::to_string(c.encoder.feature_width)},
        {"encoder.layers", std::to_string(c.encoder.layers)},
        {"encoder.heads", std::to_string(c.encoder.heads)},
        {"encoder.ablation", model::to_string(c.encoder.ablation)},
        {"decoder.layers", std::to_string(c.decoder.layers)},
        {"decoder.heads", std::to_string(c.decoder.heads)},
        {"decoder.width", std::to_string(c.decoder.width)},
        {"decoder.vocab_size", std::to_string(c.decoder.vocab_size)},
        {"decoder.max_len", std::to_string(c.decoder.max_len)},
        {"generation.search", generation::to_string(c.generation.strategy)},
        {"generation.beam_width", std::to_string(c.generation.beam_width)},
        {"generation.length_penalty", str(c.generation.length_penalty)},
        {"generation.no_repeat_ngram", std::to_string(c.generation.no_repeat_ngram)},
        {"generation.max_len", std::to_string(c.generation.max_len)},
        {"train.learn_rate", str(c.learn_rate)},
        {"train.batch", std::to_string(c.batch)},
        {"train.max_epochs", std::to_string(c.max_epochs)},
        {"train.patience", std::to_string(c.patience)},
        {"train.warmup_frac", str(c.warmup_frac)},
        {"train.clip_norm", str(c.clip_norm)},
        {"train.weight_decay", str(c.weight_decay)},
        {"train.seed", std::to_string(c.seed)},
    };
}

void assign(ExperimentConfig& c, const pt::ptree& t) {
    const auto known = flatten(c);
    for (const auto& [section, body] : t) {
        if (body.empty() && !body.data().empty()) throw ConfigError("key \"" + section + "\" outside any section");
        for (const auto& [key, _] : body) {
            if (!known.count(section + "." + key)) throw ConfigError("unknown config key " + section + "." + key);
        }
    }
    c.dataset = get<std::string>(t, "data.root", c.dataset.string());
    c.manifest = get<std::string>(t, "data.manifest", c.manifest);
    c.dataset_name = get<std::string>(t, "data.name", c.dataset_name);
    c.image_size = get<std::size_t>(t, "data.image_size", c.image_size);
    if (auto b = t.get_optional<std::string>("encoder.backbone")) {
        const std::size_t channels = c.encoder.backbone.out_channels;
        c.encoder.backbone = model::parse_backbone_spec(*b);
        c.encoder.backbone.out_channels = channels;
    }
    c.encoder.backbone.out_channels = get<std::size_t>(t, "encoder.backbone_channels", c.encoder.backbone.out_channels);
    c.encoder.patch_count = get<std::size_t>(t, "encoder.patch_count", c.encoder.patch_count);
    c.encoder.feature_width = get<std::size_t>(t, "encoder.feature_width", c.encoder.feature_width);
    c.encoder.layers = get<std::size_t>(t, "encoder.layers", c.encoder.layers);
    c.encoder.heads = get<std::size_t>(t, "encoder.heads", c.encoder.heads);
    if (auto a = t.get_optional<std::string>("encoder.ablation")) c.encoder.ablation = model::parse_ablation(*a);
    c.decoder.layers = get<std::size_t>(t, "decoder.layers", c.decoder.layers);
    c.decoder.heads = get<std::size_t>(t, "decoder.heads", c.decoder.heads);
    c.decoder.width = get<std::size_t>(t, "decoder.width", c.decoder.width);
    c.decoder.vocab_size = get<std::size_t>(t, "decoder.vocab_size", c.decoder.vocab_size);
    c.decoder.max_len = get<std::size_t>(t, "decoder.max_len", c.decoder.max_len);
    if (auto s = t.get_optional<std::string>("generation.search")) c.generation.strategy = generation::parse_strategy(*s);
    c.generation.beam_width = get<std::size_t>(t, "generation.beam_width", c.generation.beam_width);
    c.generation.length_penalty = get<double>(t, "generation.length_penalty", c.generation.length_penalty);
    c.generation.no_repeat_ngram = get<std::size_t>(t, "generation.no_repeat_ngram", c.generation.no_repeat_ngram);
    c.generation.max_len = get<std::size_t>(t, "generation.max_len", c.generation.max_len);
    c.learn_rate = get<double>(t, "train.learn_rate", c.learn_rate);
    c.batch = get<std::size_t>(t, "train.batch", c.batch);
    c.max_epochs = get<std::size_t>(t, "train.max_epochs", c.max_epochs);
    c.patience = get<std::size_t>(t, "train.patience", c.patience);
    c.warmup_frac = get<double>(t, "train.warmup_frac", c.warmup_frac);
    c.clip_norm = get<double>(t, "train.clip_norm", c.clip_norm);
    c.weight_decay = get<double>(t, "train.weight_decay", c.weight_decay);
    c.seed = get<std::uint64_t>(t, "train.seed", c.seed);
}

}  // namespace

ExperimentConfig load_config(const std::filesystem::path& ini) {
    pt::ptree tree;
    try {
        pt::read_ini(ini.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(e.what());
    }
    ExperimentConfig c;
    assign(c, tree);
    if (!c.dataset.empty() && c.dataset.is_relative() && !std::getenv("RSIC_DATA_ROOT")) {
        // Relative roots without RSIC_DATA_ROOT are taken relative to the config file.
        c.dataset = ini.parent_path() / c.dataset;
    }
    c.validate();
    return c;
}

void save_config(const std::filesystem::path& ini, const ExperimentConfig& cfg) {
    pt::ptree tree;
    for (const auto& [key, value] : flatten(cfg)) tree.put(key, value);
    pt::write_ini(ini.string(), tree);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || assignment.find('.') > eq) throw ConfigError("override must look like section.key=value: " + assignment);
    pt::ptree tree;
    tree.put(pt::ptree::path_type(assignment.substr(0, eq), '.'), assignment.substr(eq + 1));
    assign(cfg, tree);
}

nlohmann::json canonical_json(const ExperimentConfig& cfg) {
    // nlohmann's default object is a sorted map, so dump() is canonical.
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, value] : flatten(cfg)) j[key] = value;
    return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    pt::ptree tree;
    for (const auto& [key, value] : j.items()) tree.put(key, value.get<std::string>());
    ExperimentConfig c;
    assign(c, tree);
    return c;
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = canonical_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string encoder_abbreviation(const std::string& backbone) {
    static const std::map<std::string, std::string> abbrev = {
        {"resnet", "R"},     {"wide_resnet", "WR"}, {"resnext", "RX"},   {"regnet", "RG"},        {"vggnet", "V"},
        {"densenet", "D"},   {"alexnet", "A"},      {"googlenet", "G"}, {"inceptionnet", "I"},   {"mobilenetv2", "M2"},
        {"mobilenetv3", "M3"}, {"convnext", "C"},   {"toy", "T"},
    };
    const auto it = abbrev.find(backbone);
    if (it == abbrev.end()) throw ConfigError("no abbreviation for backbone \"" + backbone + "\"");
    return it->second;
}

std::string cell_name(const std::string& backbone, model::Ablation ablation, generation::Strategy search) {
    return encoder_abbreviation(backbone) + "-" + model::to_string(ablation) + "-" +
           (search == generation::Strategy::greedy ? "G" : "B");
}

}  // namespace rsic::harness
