#pragma once

#include <cstdint>
#include <filesystem>

namespace rsic::harness {

struct SyntheticOptions {
    std::size_t train = 20;
    std::size_t val = 4;
    std::size_t test = 4;
    std::size_t size = 56;
    std::uint64_t seed = 0;
};

// Coloured shapes on plain ground, one caption each, e.g.
// "there is a red square on dark ground". Writes root/imgs/*.png and
// root/dataset.json; file names start with the shape, which doubles as the class.
void make_synthetic_dataset(const std::filesystem::path& root, const SyntheticOptions& opts = {});

}  // namespace rsic::harness
