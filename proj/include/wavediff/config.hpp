#pragma once

#include <string>

#include "wavediff/diffusion.hpp"
#include "wavediff/training.hpp"

namespace wavediff {

/// Flat key=value run configuration. Unknown keys are rejected; '#' starts a
/// comment. Defaults are the desk-scale values; key reference lives in the
/// README and default_config_text().
struct RunConfig {
  GeneratorSpec model;  // image_channels/resolution mirror data.*

  int diffusion_steps = 4;
  std::string schedule_kind = "geometric-alpha-bar";
  double beta_min = 0.1;
  double alpha_bar_T = 1e-3;
  double beta_max = 0.7;

  TrainConfig train;

  std::string data_source = "two-mode-gaussian-images";  // kind or a directory
  int data_resolution = 32;
  int data_channels = 3;
  int data_count = 1024;
  uint64_t data_seed = 0;

  std::string raw_text;  // verbatim input, echoed into every checkpoint

  DiffusionSchedule schedule() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

/// A config file listing every key at its default value.
std::string default_config_text();

}  // namespace wavediff
