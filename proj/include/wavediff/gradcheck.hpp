#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wavediff/ops.hpp"

namespace wavediff {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;     // central-difference half step
  int64_t max_coords = 0; // per parameter; 0 checks every coordinate
  uint64_t seed = 17;     // coordinate sampling when max_coords > 0
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double loss = 0.0;
  bool pass = true;

  const GradCheckEntry& entry(const std::string& name) const;
};

using LossBuilder =
    std::function<ag::Value(ag::Tape& tape, const std::vector<ag::Value>& params)>;

/// Compares reverse-mode gradients of a scalar loss against central finite
/// differences, parameter by parameter. The builder must be a pure function
/// of the parameter tensors; this is enforced by evaluating it twice and
/// requiring bitwise-equal losses.
///
/// A coordinate passes when |ad - fd| <= tol * max(|ad|, |fd|, 1e-3); the
/// floor absorbs finite-difference noise (~1e-10 at 64-bit, h = 1e-5) on
/// coordinates whose true gradient is zero.
GradCheckReport gradcheck(const LossBuilder& f,
                          const std::vector<std::pair<std::string, NDTensor>>& params,
                          const GradCheckOptions& opt = {});

}  // namespace wavediff
