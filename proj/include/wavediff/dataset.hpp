#pragma once

#include <string>

#include "wavediff/training.hpp"

namespace wavediff {

struct SyntheticSpec {
  std::string kind = "two-mode-gaussian-images";  // shapes | checkerboard
  int resolution = 32;
  int channels = 3;
  int count = 1024;
  uint64_t seed = 0;
};

/// Pure function of the spec: sample i draws from RngStream(seed, "sample.i"),
/// so corpora are reproducible file by file.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Directory of PGM/PPM files, or a synthetic kind name.
Dataset load_dataset(const std::string& source, int resolution, int channels, int count,
                     uint64_t seed);

}  // namespace wavediff
