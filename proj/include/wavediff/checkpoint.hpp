#pragma once

#include <memory>
#include <string>
#include <vector>

#include "wavediff/config.hpp"
#include "wavediff/training.hpp"

namespace wavediff {

/// One entry of the checkpoint tensor table. f64 payloads round-trip bitwise;
/// f32 is a storage option that quantizes on write.
struct NamedTensor {
  std::string name;
  NDTensor tensor;
  bool f32 = false;
};

/// "WDIF" container: magic, u32 version, config blob, tensor table
/// (name, dtype tag, rank, dims, little-endian payload), trailing CRC32.
void write_tensor_file(const std::string& path, const std::string& config_blob,
                       const std::vector<NamedTensor>& tensors);
std::pair<std::string, std::vector<NamedTensor>> read_tensor_file(const std::string& path);

void save_checkpoint(const std::string& path, const TrainState& state,
                     const std::string& config_text);

struct LoadedCheckpoint {
  std::unique_ptr<TrainState> state;
  RunConfig config;
  std::string config_text;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace wavediff
