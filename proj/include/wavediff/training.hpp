#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "wavediff/diffusion.hpp"
#include "wavediff/networks.hpp"

namespace wavediff {

struct TrainConfig {
  double lr_g = 1.6e-4;
  double lr_d = 1.25e-4;
  int batch = 16;
  int epochs = 200;
  double lambda_rec = 1.0;
  double ema_decay = 0.999;
  double r1_gamma = 0.05;
  int r1_every = 4;  // 0 disables the penalty
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  bool reuse_draws = true;  // one (t, y_t, z) draw serves both D and G updates
  int checkpoint_every = 0;  // steps; 0 = final checkpoint only
  int eval_every = 0;        // steps; 0 = once per epoch
  int eval_samples = 256;
};

struct LossReport {
  double adv_d = 0.0;
  double adv_g = 0.0;
  double rec = 0.0;
  double g_total = 0.0;
  double r1 = 0.0;
};

struct AdamState {
  std::unordered_map<std::string, NDTensor> m, v;
  int64_t step = 0;
};

/// Standard bias-corrected Adam over a named parameter set. Missing moment
/// tensors are zero-initialized on first use.
void adam_update(ParamStore& params, const std::unordered_map<std::string, NDTensor>& grads,
                 AdamState& state, double lr, double beta1, double beta2, double eps);

/// shadow' = decay * shadow + (1 - decay) * params, name by name.
void ema_update(ParamStore& shadow, const ParamStore& params, double decay);

/// (gamma/2) * E_b || d D(y_prev, y_t, t)/d y_prev ||^2, differentiable in
/// D's parameters (the input gradient is itself a graph).
ag::Value r1_penalty(const Discriminator& d, ParamLeaves& dctx, const ag::Value& y_prev_leaf,
                     const ag::Value& y_t_leaf, const std::vector<int>& t, double gamma);

/// Full generator + discriminator + optimizer/EMA state; what a checkpoint
/// round-trips bitwise.
struct TrainState {
  std::unique_ptr<Generator> generator;
  std::unique_ptr<Discriminator> discriminator;
  ParamStore ema;
  AdamState adam_g, adam_d;
  int64_t global_step = 0;
  RngStream rng_noise, rng_latent, rng_time;

  TrainState(GeneratorSpec gspec, uint64_t seed);
  const GeneratorSpec& gspec() const { return generator->spec(); }
};

/// One adversarial step: a discriminator update on a (real, fake) pair at a
/// uniformly drawn step index, then a generator update with the adversarial
/// and L1 reconstruction terms, Adam for both, and an EMA refresh. Throws on
/// nonfinite losses with step diagnostics.
LossReport train_step(TrainState& state, const NDTensor& x0, const DiffusionSchedule& sch,
                      const TrainConfig& cfg);

struct EvalMetrics {
  double mode_coverage = 0.0;  // min per-mode assignment fraction
  double moment_err = 0.0;     // max abs channel mean/var gap vs the dataset
};

struct Dataset {
  NDTensor images;  // [N, C, H, W] in [-1, 1]
  std::vector<NDTensor> mode_templates;
  std::string kind;
};

/// Samples from the EMA generator and scores diversity/moment proxies
/// against the dataset.
EvalMetrics evaluate(TrainState& state, const Dataset& data, const DiffusionSchedule& sch,
                     int num_samples, uint64_t seed);

struct FitResult {
  std::vector<LossReport> history;  // one entry per optimizer step
  std::vector<std::string> checkpoints_written;
  std::string metrics_path;
  int64_t eval_count = 0;
};

/// Epoch loop: seed-determined shuffles, periodic checkpoints named
/// ckpt_{step}.wdif, and a metrics.csv row per evaluation with the frozen
/// header step,epoch,L_adv_D,L_adv_G,L_rec,r1,mode_coverage,moment_err.
/// Resuming from a checkpointed state continues at state.global_step.
FitResult fit(TrainState& state, const Dataset& data, const DiffusionSchedule& sch,
              const TrainConfig& cfg, const std::string& out_dir,
              const std::string& config_echo);

}  // namespace wavediff
