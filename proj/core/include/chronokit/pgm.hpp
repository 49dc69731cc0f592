#pragma once

#include <string>

#include "chronokit/tensor.hpp"

namespace chronokit {

// Binary P5, 8-bit. Values are round(255 * v) with v clamped to [0,1].
void write_pgm(const std::string& path, const Tensor& image);

// Returns values back in [0,1] (v / 255).
Tensor read_pgm(const std::string& path);

}  // namespace chronokit
