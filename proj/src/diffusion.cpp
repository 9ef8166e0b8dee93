#include "wavediff/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "wavediff/wavelet.hpp"

namespace wavediff {

void DiffusionSchedule::validate() const {
  if (steps < 1) throw std::invalid_argument("schedule: steps must be >= 1");
  if (alpha_bar.size() != static_cast<size_t>(steps) + 1 || alpha_bar[0] != 1.0) {
    throw std::logic_error("schedule: alpha_bar must have T+1 entries starting at 1");
  }
  for (int t = 1; t <= steps; ++t) {
    if (!(beta[t] > 0.0 && beta[t] < 1.0)) {
      throw std::invalid_argument("schedule: beta[" + std::to_string(t) + "] = " +
                                  std::to_string(beta[t]) + " outside (0,1)");
    }
    if (!(alpha_bar[t] < alpha_bar[t - 1])) {
      throw std::invalid_argument("schedule: alpha_bar must be strictly decreasing");
    }
  }
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "geometric-alpha-bar") return ScheduleKind::kGeometricAlphaBar;
  if (s == "linear-beta") return ScheduleKind::kLinearBeta;
  throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::kGeometricAlphaBar ? "geometric-alpha-bar" : "linear-beta";
}

DiffusionSchedule make_schedule(int steps, ScheduleKind kind, const ScheduleParams& p) {
  if (steps < 1) throw std::invalid_argument("make_schedule: steps must be >= 1");
  DiffusionSchedule s;
  s.steps = steps;
  s.beta.assign(steps + 1, 0.0);
  s.alpha.assign(steps + 1, 1.0);
  s.alpha_bar.assign(steps + 1, 1.0);

  if (kind == ScheduleKind::kGeometricAlphaBar) {
    const double hi = 1.0 - p.beta_min;
    const double lo = p.alpha_bar_T;
    if (!(hi > 0.0 && lo > 0.0)) {
      throw std::invalid_argument("make_schedule: geometric endpoints must be positive");
    }
    for (int t = 1; t <= steps; ++t) {
      const double frac = steps == 1 ? 1.0 : static_cast<double>(t - 1) / (steps - 1);
      s.alpha_bar[t] = std::exp(std::log(hi) + frac * (std::log(lo) - std::log(hi)));
      s.beta[t] = 1.0 - s.alpha_bar[t] / s.alpha_bar[t - 1];
      s.alpha[t] = 1.0 - s.beta[t];
    }
  } else {
    for (int t = 1; t <= steps; ++t) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
      s.beta[t] = p.beta_min + frac * (p.beta_max - p.beta_min);
      s.alpha[t] = 1.0 - s.beta[t];
      s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
  }

  s.posterior_mean_y0.assign(steps + 1, 0.0);
  s.posterior_mean_yt.assign(steps + 1, 0.0);
  s.posterior_var.assign(steps + 1, 0.0);
  for (int t = 1; t <= steps; ++t) {
    const double ab_prev = s.alpha_bar[t - 1];
    const double one_minus_ab = 1.0 - s.alpha_bar[t];
    s.posterior_mean_y0[t] = std::sqrt(ab_prev) * s.beta[t] / one_minus_ab;
    s.posterior_mean_yt[t] = std::sqrt(s.alpha[t]) * (1.0 - ab_prev) / one_minus_ab;
    s.posterior_var[t] = s.beta[t] * (1.0 - ab_prev) / one_minus_ab;
  }
  s.validate();
  return s;
}

namespace {

void check_t(int t, const DiffusionSchedule& sch, int t_min, const char* op) {
  if (t < t_min || t > sch.steps) {
    throw std::invalid_argument(std::string(op) + ": t = " + std::to_string(t) +
                                " outside [" + std::to_string(t_min) + ", " +
                                std::to_string(sch.steps) + "]");
  }
}

int64_t batch_plane(const NDTensor& x) {
  int64_t p = 1;
  for (int64_t d = 1; d < x.ndim(); ++d) p *= x.dim(d);
  return p;
}

}  // namespace

NDTensor q_sample(const NDTensor& y0, const std::vector<int>& t, const NDTensor& eps,
                  const DiffusionSchedule& sch) {
  if (!y0.same_shape(eps)) throw std::invalid_argument("q_sample: eps shape differs from y0");
  if (static_cast<int64_t>(t.size()) != y0.dim(0)) {
    throw std::invalid_argument("q_sample: need one t per sample");
  }
  NDTensor out(y0.shape());
  const int64_t plane = batch_plane(y0);
  for (int64_t b = 0; b < y0.dim(0); ++b) {
    check_t(t[b], sch, 0, "q_sample");
    const double ab = sch.alpha_bar[t[b]];
    const double c0 = std::sqrt(ab), ce = std::sqrt(1.0 - ab);
    for (int64_t i = b * plane; i < (b + 1) * plane; ++i) out[i] = c0 * y0[i] + ce * eps[i];
  }
  return out;
}

NDTensor q_sample(const NDTensor& y0, int t, const NDTensor& eps, const DiffusionSchedule& sch) {
  return q_sample(y0, std::vector<int>(static_cast<size_t>(y0.dim(0)), t), eps, sch);
}

NDTensor q_posterior_sample(const NDTensor& y0, const NDTensor& y_t, const std::vector<int>& t,
                            const DiffusionSchedule& sch, RngStream& rng) {
  if (!y0.same_shape(y_t)) throw std::invalid_argument("q_posterior_sample: shape mismatch");
  if (static_cast<int64_t>(t.size()) != y0.dim(0)) {
    throw std::invalid_argument("q_posterior_sample: need one t per sample");
  }
  NDTensor out(y0.shape());
  const int64_t plane = batch_plane(y0);
  for (int64_t b = 0; b < y0.dim(0); ++b) {
    check_t(t[b], sch, 1, "q_posterior_sample");
    const double c0 = sch.posterior_mean_y0[t[b]];
    const double ct = sch.posterior_mean_yt[t[b]];
    const double sigma = std::sqrt(sch.posterior_var[t[b]]);
    for (int64_t i = b * plane; i < (b + 1) * plane; ++i) {
      double v = c0 * y0[i] + ct * y_t[i];
      if (sigma > 0.0) v += sigma * rng.normal();
      out[i] = v;
    }
  }
  return out;
}

NDTensor q_posterior_sample(const NDTensor& y0, const NDTensor& y_t, int t,
                            const DiffusionSchedule& sch, RngStream& rng) {
  return q_posterior_sample(y0, y_t, std::vector<int>(static_cast<size_t>(y0.dim(0)), t), sch,
                            rng);
}

SampleResult sample(const DenoiserFn& denoiser, const DiffusionSchedule& sch,
                    const SamplerConfig& cfg, int batch) {
  if (batch < 1) throw std::invalid_argument("sample: batch must be >= 1");
  if (cfg.image_resolution % 2 != 0) {
    throw std::invalid_argument("sample: image resolution must be even");
  }
  const int64_t wc = 4 * cfg.image_channels;
  const int64_t wr = cfg.image_resolution / 2;

  RngStream noise(cfg.seed, "sample.noise");
  RngStream latent(cfg.seed, "sample.latent");

  SampleResult result;
  NDTensor y = noise.normal_tensor({batch, wc, wr, wr});
  for (int t = sch.steps; t >= 1; --t) {
    NDTensor z = latent.normal_tensor({batch, cfg.latent_dim});
    NDTensor y0_pred = denoiser(y, z, std::vector<int>(static_cast<size_t>(batch), t));
    ++result.generator_calls;
    if (!all_finite(y0_pred)) {
      throw std::runtime_error("sample: nonfinite generator output at step t=" +
                               std::to_string(t));
    }
    y = q_posterior_sample(y0_pred, y, t, sch, noise);
    if (!all_finite(y)) {
      throw std::runtime_error("sample: nonfinite posterior draw at step t=" + std::to_string(t));
    }
  }
  result.images = idwt_packed(y);
  return result;
}

}  // namespace wavediff
