#pragma once

#include <string>

#include "swapdiff/tensor.hpp"

namespace swapdiff {

// Minimal PNG support over zlib: 8-bit RGB or grayscale, non-interlaced.
// Values are quantized with round-half-even on save and mapped back to
// [0,1] on load.

void write_png_rgb(const std::string& path, const Tensor& image);  // [3,H,W] in [0,1]
void write_png_gray(const std::string& path, const Tensor& map);   // [H,W] in [0,1]

Tensor read_png_rgb(const std::string& path);  // -> [3,H,W] in [0,1]

}  // namespace swapdiff
