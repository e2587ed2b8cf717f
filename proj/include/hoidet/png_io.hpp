#pragma once

#include "hoidet/gen_model.hpp"

#include <string>

namespace hoidet {

// 8-bit RGB PNG files. Values round-trip through the [0,1] float raster with
// 1/255 quantization.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

}  // namespace hoidet
