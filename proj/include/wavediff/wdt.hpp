#pragma once

#include <string>

#include "wavediff/tensor.hpp"

namespace wavediff {

/// Wavelet tensor file: "WDT1" magic, u32 version, u32 rank, u64 dims,
/// little-endian f64 payload. Packed subband tensors use the frozen
/// [ll, lh, hl, hh] channel-block order.
void save_wdt(const std::string& path, const NDTensor& t);
NDTensor load_wdt(const std::string& path);

}  // namespace wavediff
