#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wavediff/rng.hpp"
#include "wavediff/tensor.hpp"

namespace wavediff {

/// Per-step constants of the forward process and its tractable posterior.
/// Arrays are indexed by step with alpha_bar[0] = 1; beta/posterior entries
/// for t = 0 are unused placeholders.
struct DiffusionSchedule {
  int steps = 0;                         // T
  std::vector<double> beta;              // [T+1]
  std::vector<double> alpha;             // [T+1], 1 - beta
  std::vector<double> alpha_bar;         // [T+1], prod alpha, alpha_bar[0] = 1
  std::vector<double> posterior_mean_y0; // coefficient on the clean sample
  std::vector<double> posterior_mean_yt; // coefficient on the noisy sample
  std::vector<double> posterior_var;

  void validate() const;
};

enum class ScheduleKind { kGeometricAlphaBar, kLinearBeta };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

struct ScheduleParams {
  double beta_min = 0.1;      // both kinds
  double alpha_bar_T = 1e-3;  // geometric-alpha-bar terminal value
  double beta_max = 0.7;      // linear-beta terminal value
};

/// Geometric kind: log alpha_bar interpolates from log(1 - beta_min) at t=1
/// down to log(alpha_bar_T) at t=T, and beta_t = 1 - alpha_bar_t/alpha_bar_{t-1}.
/// Linear kind: beta_t linearly spaced in [beta_min, beta_max].
/// Throws if any derived beta falls outside (0, 1).
DiffusionSchedule make_schedule(int steps, ScheduleKind kind = ScheduleKind::kGeometricAlphaBar,
                                const ScheduleParams& params = {});

/// y_t = sqrt(alpha_bar_t) * y0 + sqrt(1 - alpha_bar_t) * eps, per-sample t.
/// t = 0 is the identity convention.
NDTensor q_sample(const NDTensor& y0, const std::vector<int>& t, const NDTensor& eps,
                  const DiffusionSchedule& sch);
NDTensor q_sample(const NDTensor& y0, int t, const NDTensor& eps, const DiffusionSchedule& sch);

/// Draw y_{t-1} ~ q(y_{t-1} | y_t, y0): Gaussian with mean
/// c0(t)*y0 + ct(t)*y_t and variance posterior_var[t]. t = 1 is deterministic.
NDTensor q_posterior_sample(const NDTensor& y0, const NDTensor& y_t, const std::vector<int>& t,
                            const DiffusionSchedule& sch, RngStream& rng);
NDTensor q_posterior_sample(const NDTensor& y0, const NDTensor& y_t, int t,
                            const DiffusionSchedule& sch, RngStream& rng);

/// Clean-sample predictor: maps (y_t, z, t) -> y0'. The sampler counts calls
/// to enforce the few-step contract.
using DenoiserFn =
    std::function<NDTensor(const NDTensor& y_t, const NDTensor& z, const std::vector<int>& t)>;

struct SamplerConfig {
  int steps = 4;
  int latent_dim = 100;
  uint64_t seed = 0;
  int image_channels = 3;
  int image_resolution = 32;  // pixel space; wavelet tensors run at half
};

struct SampleResult {
  NDTensor images;          // [B, C, H, W] in roughly [-1, 1]
  int64_t generator_calls = 0;
};

/// Ancestral few-step sampling in wavelet space: start from y_T ~ N(0, I),
/// alternate clean-sample prediction and posterior draws, and reconstruct
/// pixels with the inverse wavelet transform at the end. Aborts with a
/// diagnostic if any intermediate tensor goes nonfinite.
SampleResult sample(const DenoiserFn& denoiser, const DiffusionSchedule& sch,
                    const SamplerConfig& cfg, int batch);

}  // namespace wavediff
