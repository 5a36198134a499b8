#pragma once

#include <string>

#include "renderflow/common.hpp"

namespace rf {

// 8-bit RGB PNG with stored (uncompressed) deflate blocks. Deterministic
// byte-for-byte given the same pixels. Values are mapped round(v*255) after
// clamping to [0,1].
void write_png(const Image& img, const std::string& path);

// Reads PNGs produced by write_png (8-bit RGB, stored deflate, filter 0).
// Returns floats in [0,1].
Image read_png(const std::string& path);

}  // namespace rf
