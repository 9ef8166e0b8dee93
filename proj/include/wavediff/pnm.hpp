#pragma once

#include <string>
#include <vector>

#include "wavediff/tensor.hpp"

namespace wavediff {

/// Binary PGM (P5) / PPM (P6) with maxval 255. Pixels map to [-1, 1] via
/// v/127.5 - 1 on load; on save values are clamped to [-1, 1] and quantized
/// half-up as floor(127.5*(v+1) + 0.5).

NDTensor load_pnm(const std::string& path);  // [C,H,W], C = 1 or 3
void save_pnm(const std::string& path, const NDTensor& image);  // [C,H,W]

/// Loads every .pgm/.ppm in a directory (sorted by name) into one batch.
/// All images must share one size and channel count.
NDTensor load_image_dir(const std::string& dir);

/// Writes sample_{i}.pgm/.ppm plus a manifest.json listing the files.
std::vector<std::string> save_image_batch(const std::string& dir, const NDTensor& batch);

uint8_t quantize_unit(double v);  // the clamping/rounding convention above

}  // namespace wavediff
