#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hashlat/core/tensor.hpp"

namespace hashlat {

// Writes 8-bit RGB PNG (zlib-deflated, filter 0). rgb is row-major
// height x width x 3.
void write_png(const std::string& path, const std::vector<uint8_t>& rgb, int width, int height);

// Converts a (3 x H x W) tensor with values in [0,1] to interleaved bytes.
std::vector<uint8_t> tensor_to_rgb8(const Tensor& image);

void write_image_png(const std::string& path, const Tensor& image);

}  // namespace hashlat
