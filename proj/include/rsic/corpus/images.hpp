#pragma once

#include <filesystem>
#include <span>

#include "rsic/nn/tensor.hpp"

namespace rsic::corpus {

// Reads each image, resizes to size x size, converts to RGB in [0,1] and stacks
// the batch as (B, size, size, 3). Throws DatasetError for unreadable files.
nn::Tensor load_images(std::span<const std::filesystem::path> paths, std::size_t size);

// Writes an RGB [0,1] tensor (H, W, 3) as an 8-bit image file.
void save_image(const std::filesystem::path& path, const nn::Tensor& rgb);

}  // namespace rsic::corpus
