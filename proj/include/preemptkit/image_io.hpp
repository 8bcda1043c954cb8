#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "preemptkit/tensor.hpp"

namespace pk {

// Binary netpbm, maxval 255. Pixels in [0,1] map to floor(v*255 + 0.5)
// (round half up) after clamping. P5 takes a 1-channel tensor, P6 a 3-channel one.
std::vector<std::uint8_t> encode_pgm(const Tensor& image);
std::vector<std::uint8_t> encode_ppm(const Tensor& image);

// Chooses P5 or P6 by channel count.
void write_pnm(const std::filesystem::path& path, const Tensor& image);

std::uint8_t to_byte(float v);

}  // namespace pk
