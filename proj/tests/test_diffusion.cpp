#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "wavediff/diffusion.hpp"
#include "wavediff/wavelet.hpp"

using namespace wavediff;

TEST_CASE("schedule construction: T=1 telescopes, T=4 hits the terminal value") {
  DiffusionSchedule s1 = make_schedule(1);
  CHECK(s1.beta[1] == doctest::Approx(1.0 - 1e-3).epsilon(1e-12));

  DiffusionSchedule s4 = make_schedule(4);
  CHECK(s4.alpha_bar[4] == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(s4.beta[1] == doctest::Approx(0.1).epsilon(1e-12));

  for (int T : {1, 2, 4, 8, 16}) {
    for (ScheduleKind kind : {ScheduleKind::kGeometricAlphaBar, ScheduleKind::kLinearBeta}) {
      DiffusionSchedule s = make_schedule(T, kind);
      CHECK(s.alpha_bar[0] == 1.0);
      for (int t = 1; t <= T; ++t) {
        CHECK(s.beta[t] > 0.0);
        CHECK(s.beta[t] < 1.0);
        CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
      }
    }
  }
}

TEST_CASE("schedule rejects parameters that push beta outside (0,1)") {
  ScheduleParams p;
  p.alpha_bar_T = 0.95;  // above 1 - beta_min -> nonpositive beta somewhere
  CHECK_THROWS_AS(make_schedule(4, ScheduleKind::kGeometricAlphaBar, p), std::invalid_argument);
  ScheduleParams q;
  q.beta_max = 1.2;
  CHECK_THROWS_AS(make_schedule(4, ScheduleKind::kLinearBeta, q), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(0), std::invalid_argument);
}

TEST_CASE("q_sample: identity at t=0, pure noise scaling at y0=0, range errors") {
  DiffusionSchedule sch = make_schedule(4);
  RngStream rng(1, "qs");
  NDTensor y0 = rng.normal_tensor({2, 3, 4, 4});
  NDTensor eps = rng.normal_tensor({2, 3, 4, 4});

  CHECK(max_abs_diff(q_sample(y0, 0, eps, sch), y0) == 0.0);

  NDTensor zero = NDTensor::zeros(y0.shape());
  NDTensor yt = q_sample(zero, 3, eps, sch);
  const double c = std::sqrt(1.0 - sch.alpha_bar[3]);
  CHECK(max_abs_diff(yt, scale(eps, c)) < 1e-15);

  CHECK_THROWS_AS(q_sample(y0, 5, eps, sch), std::invalid_argument);
  CHECK_THROWS_AS(q_sample(y0, -1, eps, sch), std::invalid_argument);
}

TEST_CASE("q_sample moments match the closed form over 1e5 draws") {
  DiffusionSchedule sch = make_schedule(4);
  RngStream rng(2, "qs-mc");
  const double y0v = 0.7;
  const int t = 2;
  const int64_t n = 100000;
  NDTensor y0 = NDTensor::full({1, 1, 1, 1}, y0v);
  double sum = 0.0, sum2 = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    NDTensor eps = rng.normal_tensor({1, 1, 1, 1});
    const double v = q_sample(y0, t, eps, sch)[0];
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  const double want_mean = std::sqrt(sch.alpha_bar[t]) * y0v;
  const double want_var = 1.0 - sch.alpha_bar[t];
  const double se_mean = std::sqrt(want_var / n);
  const double se_var = want_var * std::sqrt(2.0 / (n - 1));
  CHECK(std::fabs(mean - want_mean) < 4.0 * se_mean);
  CHECK(std::fabs(var - want_var) < 4.0 * se_var);
}

TEST_CASE("posterior: deterministic final step and the mean identity") {
  DiffusionSchedule sch = make_schedule(4);
  RngStream rng(3, "post");
  NDTensor y0 = rng.normal_tensor({1, 2, 4, 4});
  NDTensor y1 = rng.normal_tensor({1, 2, 4, 4});
  const uint64_t before = rng.counter();
  NDTensor out = q_posterior_sample(y0, y1, 1, sch, rng);
  CHECK(rng.counter() == before);  // variance 0 at t=1, no draws consumed
  CHECK(max_abs_diff(out, y0) == 0.0);

  // c0 + ct*sqrt(alpha_bar_t) == sqrt(alpha_bar_{t-1}), asserted numerically
  for (int t = 1; t <= 4; ++t) {
    const double lhs = sch.posterior_mean_y0[t] +
                       sch.posterior_mean_yt[t] * std::sqrt(sch.alpha_bar[t]);
    CHECK(lhs == doctest::Approx(std::sqrt(sch.alpha_bar[t - 1])).epsilon(1e-12));
  }

  CHECK_THROWS_AS(q_posterior_sample(y0, y1, 0, sch, rng), std::invalid_argument);
}

TEST_CASE("two-stage sampling reproduces the closed-form marginal (T=4 spot check)") {
  DiffusionSchedule sch = make_schedule(4);
  RngStream rng(4, "post-mc");
  const double y0v = -0.4;
  NDTensor y0 = NDTensor::full({1, 1, 1, 1}, y0v);
  const int64_t n = 100000;
  for (int t = 2; t <= 4; t += 2) {
    double sum = 0.0, sum2 = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      NDTensor eps = rng.normal_tensor({1, 1, 1, 1});
      NDTensor yt = q_sample(y0, t, eps, sch);
      const double v = q_posterior_sample(y0, yt, t, sch, rng)[0];
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    const double want_mean = std::sqrt(sch.alpha_bar[t - 1]) * y0v;
    const double want_var = 1.0 - sch.alpha_bar[t - 1];
    const double se_mean = std::sqrt(std::max(want_var, 1e-12) / n);
    const double se_var = std::max(want_var, 1e-12) * std::sqrt(2.0 / (n - 1));
    CHECK(std::fabs(mean - want_mean) < 4.0 * se_mean);
    CHECK(std::fabs(var - want_var) < 4.0 * se_var);
  }
}

TEST_CASE("sampler: frozen generator at T=1 reproduces idwt of its output exactly") {
  RngStream rng(5, "sampler");
  NDTensor y_star = rng.normal_tensor({2, 4, 4, 4});  // grayscale 8x8 -> 4ch wavelet
  DiffusionSchedule sch = make_schedule(1);
  SamplerConfig cfg;
  cfg.steps = 1;
  cfg.latent_dim = 7;
  cfg.image_channels = 1;
  cfg.image_resolution = 8;
  cfg.seed = 99;

  int64_t calls = 0;
  DenoiserFn frozen = [&](const NDTensor& y, const NDTensor& z,
                          const std::vector<int>& t) -> NDTensor {
    ++calls;
    CHECK(z.dim(1) == 7);
    CHECK(t.size() == 2);
    return y_star;
  };
  SampleResult res = sample(frozen, sch, cfg, 2);
  CHECK(calls == 1);
  CHECK(res.generator_calls == 1);
  CHECK(res.images.shape() == Shape{2, 1, 8, 8});
  CHECK(max_abs_diff(res.images, idwt_packed(y_star)) == 0.0);
}

TEST_CASE("sampler: fixed seed is bitwise reproducible; call count equals T") {
  DiffusionSchedule sch = make_schedule(4);
  SamplerConfig cfg;
  cfg.steps = 4;
  cfg.latent_dim = 3;
  cfg.image_channels = 3;
  cfg.image_resolution = 8;
  cfg.seed = 1234;

  auto denoise = [](const NDTensor& y, const NDTensor& z, const std::vector<int>& t) {
    return scale(y, 0.5);
  };
  int64_t calls1 = 0, calls2 = 0;
  DenoiserFn d1 = [&](const NDTensor& y, const NDTensor& z, const std::vector<int>& t) {
    ++calls1;
    return denoise(y, z, t);
  };
  DenoiserFn d2 = [&](const NDTensor& y, const NDTensor& z, const std::vector<int>& t) {
    ++calls2;
    return denoise(y, z, t);
  };
  SampleResult a = sample(d1, sch, cfg, 3);
  SampleResult b = sample(d2, sch, cfg, 3);
  CHECK(calls1 == 4);
  CHECK(calls2 == 4);
  CHECK(a.images.shape() == Shape{3, 3, 8, 8});  // 2x generator spatial, image channels
  for (int64_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i] == b.images[i]);
}

TEST_CASE("sampler aborts on nonfinite generator output") {
  DiffusionSchedule sch = make_schedule(2);
  SamplerConfig cfg;
  cfg.steps = 2;
  cfg.image_channels = 1;
  cfg.image_resolution = 4;
  DenoiserFn bad = [](const NDTensor& y, const NDTensor&, const std::vector<int>&) {
    return NDTensor::full(y.shape(), std::numeric_limits<double>::infinity());
  };
  CHECK_THROWS_AS(sample(bad, sch, cfg, 1), std::runtime_error);
}
