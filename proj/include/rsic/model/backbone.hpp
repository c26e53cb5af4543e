#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rsic/nn/graph.hpp"
#include "rsic/nn/parameters.hpp"

namespace rsic::model {

struct BackboneSpec {
    std::string name = "toy";
    // Channels of the final feature map; 0 picks the registry default.
    std::size_t out_channels = 0;
    std::optional<std::filesystem::path> weights_path;
};

// Parses "NAME" or "NAME:weights=PATH".
BackboneSpec parse_backbone_spec(const std::string& text);
std::string format_backbone_spec(const BackboneSpec& spec);

// Maps an image batch (B, H, W, 3) in [0,1] to its final feature map (B, h, w, C).
class Backbone {
  public:
    virtual ~Backbone() = default;
    virtual nn::Var forward(nn::Graph& g, nn::Var images) const = 0;

    const std::string& name() const { return name_; }
    std::size_t out_channels() const { return out_channels_; }

  protected:
    Backbone(std::string name, std::size_t out_channels) : name_(std::move(name)), out_channels_(out_channels) {}

  private:
    std::string name_;
    std::size_t out_channels_;
};

// Builds a backbone whose parameters live under `prefix` in `store`.
using BackboneFactory = std::function<std::unique_ptr<Backbone>(std::size_t out_channels, nn::ParameterStore& store,
                                                                const std::string& prefix, nn::Rng& rng)>;

class BackboneRegistry {
  public:
    // Registry preloaded with the toy backbone and the twelve family stand-ins.
    static BackboneRegistry& global();

    void add(const std::string& name, BackboneFactory factory, std::size_t default_channels);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    std::vector<std::string> names() const;
    std::size_t default_channels(const std::string& name) const;

    // Throws ConfigError for unknown names. With spec.weights_path, the archive is
    // loaded strictly into the new parameters (nn::ArchiveMismatch on any offender).
    std::unique_ptr<Backbone> instantiate(const BackboneSpec& spec, nn::ParameterStore& store,
                                          const std::string& prefix, nn::Rng& rng) const;

  private:
    struct Entry {
        BackboneFactory factory;
        std::size_t default_channels;
    };
    std::map<std::string, Entry> entries_;
};

}  // namespace rsic::model
