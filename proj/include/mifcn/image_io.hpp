#pragma once

#include <filesystem>
#include <iosfwd>

#include "mifcn/tensor.hpp"

namespace mifcn {

/// Reads an 8-bit portable graymap (binary P5 or ASCII P2) into a [H,W] tensor with values
/// in [0,255]. Colour maps, 16-bit samples and other raster formats are rejected with a
/// DataError naming the format.
Tensor read_pgm(std::istream& is, const std::string& context = "image");
Tensor load_image(const std::filesystem::path& path);

/// Writes binary P5, maxval 255. Values are clamped to [0,255] and rounded half-to-even.
void write_pgm(std::ostream& os, const Tensor& image);
void save_image(const Tensor& image, const std::filesystem::path& path);

/// The 8-bit value save_image stores for `value`.
unsigned char quantize_pixel(double value);

}  // namespace mifcn
