#include "wavediff/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "wavediff/checkpoint.hpp"
#include "wavediff/wavelet.hpp"

namespace wavediff {

using ag::Value;

void adam_update(ParamStore& params, const std::unordered_map<std::string, NDTensor>& grads,
                 AdamState& state, double lr, double beta1, double beta2, double eps) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (const auto& name : params.names()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    NDTensor& p = params.at(name);
    const NDTensor& g = git->second;
    if (!p.same_shape(g)) {
      throw std::invalid_argument("adam: gradient shape mismatch for " + name);
    }
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      mit = state.m.emplace(name, NDTensor::zeros(p.shape())).first;
      state.v.emplace(name, NDTensor::zeros(p.shape()));
    }
    NDTensor& m = mit->second;
    NDTensor& v = state.v.at(name);
    for (int64_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void ema_update(ParamStore& shadow, const ParamStore& params, double decay) {
  if (decay < 0.0 || decay >= 1.0) throw std::invalid_argument("ema: decay must be in [0,1)");
  for (const auto& name : params.names()) {
    NDTensor& s = shadow.at(name);
    const NDTensor& p = params.at(name);
    for (int64_t i = 0; i < s.size(); ++i) s[i] = decay * s[i] + (1.0 - decay) * p[i];
  }
}

Value r1_penalty(const Discriminator& d, ParamLeaves& dctx, const Value& y_prev_leaf,
                 const Value& y_t_leaf, const std::vector<int>& t, double gamma) {
  const int64_t B = y_prev_leaf.shape()[0];
  Value logits = d.forward(dctx, y_prev_leaf, y_t_leaf, t);
  Value gin = dctx.tape->grad(ag::sum_all(logits), y_prev_leaf);
  return ag::scale(ag::sum_all(ag::mul(gin, gin)), gamma / (2.0 * static_cast<double>(B)));
}

TrainState::TrainState(GeneratorSpec gspec, uint64_t seed)
    : generator(std::make_unique<Generator>(gspec, seed)),
      discriminator(std::make_unique<Discriminator>(DiscriminatorSpec::mirror(gspec), seed)),
      rng_noise(seed, "noise"),
      rng_latent(seed, "latent"),
      rng_time(seed, "time") {
  for (const auto& name : generator->params().names()) {
    ema.add(name, generator->params().at(name));
  }
}

namespace {

/// Reparameterized posterior draw as a graph node: c0(t)*y0 + ct(t)*y_t + sigma*xi.
/// Noise is drawn only for steps with positive variance (t > 1), matching the
/// raw q_posterior_sample draw discipline.
Value posterior_draw_graph(ag::Tape& tape, const Value& y0, const Value& y_t,
                           const std::vector<int>& t, const DiffusionSchedule& sch,
                           RngStream& rng) {
  const int64_t B = y0.shape()[0];
  NDTensor c0({B, 1, 1, 1}), ct({B, 1, 1, 1});
  NDTensor noise(y0.shape());
  const int64_t plane = y0.size() / B;
  for (int64_t b = 0; b < B; ++b) {
    const int tb = t[static_cast<size_t>(b)];
    c0[b] = sch.posterior_mean_y0[tb];
    ct[b] = sch.posterior_mean_yt[tb];
    const double sigma = std::sqrt(sch.posterior_var[tb]);
    if (sigma > 0.0) {
      for (int64_t i = b * plane; i < (b + 1) * plane; ++i) noise[i] = sigma * rng.normal();
    }
  }
  Value mean = ag::add(ag::mul(y0, tape.constant(c0)), ag::mul(y_t, tape.constant(ct)));
  return ag::add(mean, tape.constant(noise));
}

void check_finite_loss(double v, const char* which, int64_t step) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string("train_step: nonfinite ") + which + " at step " +
                             std::to_string(step));
  }
}

}  // namespace

LossReport train_step(TrainState& st, const NDTensor& x0, const DiffusionSchedule& sch,
                      const TrainConfig& cfg) {
  const GeneratorSpec& spec = st.gspec();
  if (x0.ndim() != 4 || x0.dim(2) % 2 != 0 || x0.dim(3) % 2 != 0) {
    throw std::invalid_argument("train_step: batch must be NCHW with even spatial extents");
  }
  if (x0.dim(1) != spec.image_channels || x0.dim(2) != spec.image_resolution) {
    throw std::invalid_argument("train_step: batch shape " + shape_str(x0.shape()) +
                                " does not match the model spec");
  }
  const int64_t B = x0.dim(0);

  NDTensor y0 = dwt_packed(x0);
  std::vector<int> t(static_cast<size_t>(B));
  for (auto& ti : t) ti = 1 + static_cast<int>(st.rng_time.uniform_index(sch.steps));
  NDTensor eps = st.rng_noise.normal_tensor(y0.shape());
  NDTensor y_t = q_sample(y0, t, eps, sch);
  NDTensor y_prev_real = q_posterior_sample(y0, y_t, t, sch, st.rng_noise);
  NDTensor z = st.rng_latent.normal_tensor({B, spec.latent_dim});

  LossReport rep;
  const bool do_r1 = cfg.r1_every > 0 && (st.global_step % cfg.r1_every == 0);

  {  // Discriminator update; the generator runs frozen and detached.
    ag::Tape tape;
    ParamLeaves gctx(tape, st.generator->params(), false);
    ParamLeaves dctx(tape, st.discriminator->params(), true);
    Value y_t_leaf = tape.constant(y_t);
    Value z_leaf = tape.constant(z);
    Value y0_pred = ag::detach(st.generator->forward(gctx, y_t_leaf, z_leaf, t));
    Value y_fake = posterior_draw_graph(tape, y0_pred, y_t_leaf, t, sch, st.rng_noise);
    Value y_real = tape.leaf(y_prev_real, do_r1);

    Value logit_real = st.discriminator->forward(dctx, y_real, y_t_leaf, t);
    Value logit_fake = st.discriminator->forward(dctx, y_fake, y_t_leaf, t);
    Value adv = ag::add(ag::mean_all(ag::softplus(ag::neg(logit_real))),
                        ag::mean_all(ag::softplus(logit_fake)));
    Value loss = adv;
    if (do_r1) {
      Value gin = tape.grad(ag::sum_all(logit_real), y_real);
      Value pen = ag::scale(ag::sum_all(ag::mul(gin, gin)),
                            cfg.r1_gamma / (2.0 * static_cast<double>(B)));
      rep.r1 = pen.val().item();
      loss = ag::add(adv, pen);
    }
    rep.adv_d = adv.val().item();
    check_finite_loss(loss.val().item(), "discriminator loss", st.global_step);

    auto gmap = tape.backward(loss);
    adam_update(st.discriminator->params(), dctx.grads(gmap), st.adam_d, cfg.lr_d, cfg.adam_beta1,
                cfg.adam_beta2, cfg.adam_eps);
  }

  if (!cfg.reuse_draws) {
    for (auto& ti : t) ti = 1 + static_cast<int>(st.rng_time.uniform_index(sch.steps));
    eps = st.rng_noise.normal_tensor(y0.shape());
    y_t = q_sample(y0, t, eps, sch);
    z = st.rng_latent.normal_tensor({B, spec.latent_dim});
  }

  {  // Generator update; discriminator runs frozen.
    ag::Tape tape;
    ParamLeaves gctx(tape, st.generator->params(), true);
    ParamLeaves dctx(tape, st.discriminator->params(), false);
    Value y_t_leaf = tape.constant(y_t);
    Value z_leaf = tape.constant(z);
    Value y0_pred = st.generator->forward(gctx, y_t_leaf, z_leaf, t);
    Value y_fake = posterior_draw_graph(tape, y0_pred, y_t_leaf, t, sch, st.rng_noise);
    Value logit_fake = st.discriminator->forward(dctx, y_fake, y_t_leaf, t);

    Value adv = ag::mean_all(ag::softplus(ag::neg(logit_fake)));
    Value rec = ag::mean_all(ag::abs_op(ag::sub(y0_pred, tape.constant(y0))));
    Value loss = ag::add(adv, ag::scale(rec, cfg.lambda_rec));

    rep.adv_g = adv.val().item();
    rep.rec = rec.val().item();
    rep.g_total = loss.val().item();
    check_finite_loss(rep.g_total, "generator loss", st.global_step);

    auto gmap = tape.backward(loss);
    adam_update(st.generator->params(), gctx.grads(gmap), st.adam_g, cfg.lr_g, cfg.adam_beta1,
                cfg.adam_beta2, cfg.adam_eps);
    ema_update(st.ema, st.generator->params(), cfg.ema_decay);
  }

  ++st.global_step;
  return rep;
}

EvalMetrics evaluate(TrainState& st, const Dataset& data, const DiffusionSchedule& sch,
                     int num_samples, uint64_t seed) {
  const GeneratorSpec& spec = st.gspec();
  SamplerConfig scfg;
  scfg.steps = sch.steps;
  scfg.latent_dim = spec.latent_dim;
  scfg.image_channels = spec.image_channels;
  scfg.image_resolution = spec.image_resolution;

  const int chunk = 32;
  std::vector<NDTensor> sample_chunks;
  int remaining = num_samples;
  int chunk_idx = 0;
  while (remaining > 0) {
    const int n = std::min(chunk, remaining);
    scfg.seed = seed + static_cast<uint64_t>(chunk_idx);
    DenoiserFn fn = [&](const NDTensor& y, const NDTensor& z, const std::vector<int>& tt) {
      return st.generator->forward_tensor(y, z, tt, &st.ema);
    };
    sample_chunks.push_back(sample(fn, sch, scfg, n).images);
    remaining -= n;
    ++chunk_idx;
  }

  const int64_t C = spec.image_channels;
  // channel moments over (samples x pixels)
  std::vector<double> s_mean(C, 0.0), s_var(C, 0.0), d_mean(C, 0.0), d_var(C, 0.0);
  std::vector<int64_t> s_count(C, 0), d_count(C, 0);
  for (const NDTensor& chunk_t : sample_chunks) {
    const int64_t n = chunk_t.dim(0), hw = chunk_t.dim(2) * chunk_t.dim(3);
    for (int64_t b = 0; b < n; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i) {
          const double v = chunk_t[(b * C + c) * hw + i];
          s_mean[c] += v;
          s_var[c] += v * v;
          ++s_count[c];
        }
  }
  {
    const int64_t n = data.images.dim(0), hw = data.images.dim(2) * data.images.dim(3);
    for (int64_t b = 0; b < n; ++b)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < hw; ++i) {
          const double v = data.images[(b * C + c) * hw + i];
          d_mean[c] += v;
          d_var[c] += v * v;
          ++d_count[c];
        }
  }
  EvalMetrics m;
  for (int64_t c = 0; c < C; ++c) {
    s_mean[c] /= static_cast<double>(s_count[c]);
    d_mean[c] /= static_cast<double>(d_count[c]);
    s_var[c] = s_var[c] / static_cast<double>(s_count[c]) - s_mean[c] * s_mean[c];
    d_var[c] = d_var[c] / static_cast<double>(d_count[c]) - d_mean[c] * d_mean[c];
    m.moment_err = std::max({m.moment_err, std::fabs(s_mean[c] - d_mean[c]),
                             std::fabs(s_var[c] - d_var[c])});
  }

  if (data.mode_templates.size() >= 2) {
    std::vector<int64_t> counts(data.mode_templates.size(), 0);
    int64_t total = 0;
    for (const NDTensor& chunk_t : sample_chunks) {
      const int64_t n = chunk_t.dim(0);
      const int64_t plane = chunk_t.size() / n;
      for (int64_t b = 0; b < n; ++b) {
        double best = 0.0;
        size_t best_mode = 0;
        for (size_t k = 0; k < data.mode_templates.size(); ++k) {
          const NDTensor& tmpl = data.mode_templates[k];
          double dist = 0.0;
          for (int64_t i = 0; i < plane; ++i) {
            const double dv = chunk_t[b * plane + i] - tmpl[i];
            dist += dv * dv;
          }
          if (k == 0 || dist < best) {
            best = dist;
            best_mode = k;
          }
        }
        ++counts[best_mode];
        ++total;
      }
    }
    double min_frac = 1.0;
    for (int64_t c : counts) min_frac = std::min(min_frac, static_cast<double>(c) / total);
    m.mode_coverage = min_frac;
  }
  return m;
}

namespace {

std::vector<int64_t> epoch_permutation(uint64_t seed, int64_t epoch, int64_t n) {
  RngStream rng(seed, "data.epoch." + std::to_string(epoch));
  std::vector<int64_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  for (int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(i + 1)));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  return perm;
}

NDTensor gather_batch(const NDTensor& images, const std::vector<int64_t>& perm, int64_t first,
                      int64_t count) {
  const int64_t plane = images.size() / images.dim(0);
  Shape bs = images.shape();
  bs[0] = count;
  NDTensor out(bs);
  for (int64_t k = 0; k < count; ++k) {
    const int64_t src = perm[static_cast<size_t>(first + k)];
    for (int64_t i = 0; i < plane; ++i) out[k * plane + i] = images[src * plane + i];
  }
  return out;
}

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

FitResult fit(TrainState& state, const Dataset& data, const DiffusionSchedule& sch,
              const TrainConfig& cfg, const std::string& out_dir,
              const std::string& config_echo) {
  if (data.images.ndim() != 4 || data.images.dim(0) < cfg.batch) {
    throw std::invalid_argument("fit: dataset must hold at least one batch");
  }
  const int64_t n = data.images.dim(0);
  const int64_t steps_per_epoch = n / cfg.batch;
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  const int64_t eval_every = cfg.eval_every > 0 ? cfg.eval_every : steps_per_epoch;

  std::filesystem::create_directories(out_dir);
  FitResult result;
  result.metrics_path = out_dir + "/metrics.csv";
  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("fit: cannot write " + result.metrics_path);
  metrics << "step,epoch,L_adv_D,L_adv_G,L_rec,r1,mode_coverage,moment_err\n";

  int64_t current_epoch = -1;
  std::vector<int64_t> perm;
  while (state.global_step < total_steps) {
    const int64_t epoch = state.global_step / steps_per_epoch;
    const int64_t k = state.global_step % steps_per_epoch;
    if (epoch != current_epoch) {
      perm = epoch_permutation(cfg.seed, epoch, n);
      current_epoch = epoch;
    }
    NDTensor batch = gather_batch(data.images, perm, k * cfg.batch, cfg.batch);
    LossReport rep = train_step(state, batch, sch, cfg);
    result.history.push_back(rep);

    const int64_t now = state.global_step;
    if (now % eval_every == 0 || now == total_steps) {
      EvalMetrics em = evaluate(state, data, sch, cfg.eval_samples, cfg.seed + 0x9E3779B9ull * now);
      metrics << now << "," << epoch << "," << format_g17(rep.adv_d) << ","
              << format_g17(rep.adv_g) << "," << format_g17(rep.rec) << ","
              << format_g17(rep.r1) << "," << format_g17(em.mode_coverage) << ","
              << format_g17(em.moment_err) << "\n";
      metrics.flush();
      ++result.eval_count;
    }
    const bool periodic = cfg.checkpoint_every > 0 && now % cfg.checkpoint_every == 0;
    if (periodic || now == total_steps) {
      std::string path = out_dir + "/ckpt_" + std::to_string(now) + ".wdif";
      save_checkpoint(path, state, config_echo);
      result.checkpoints_written.push_back(path);
    }
  }
  return result;
}

}  // namespace wavediff
