// Acceptance suite: runs every criterion at its pinned tolerance and prints
// one [PASS]/[FAIL] line per criterion. Exits nonzero on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "wavediff/accounting.hpp"
#include "wavediff/checkpoint.hpp"
#include "wavediff/dataset.hpp"
#include "wavediff/gradcheck.hpp"
#include "wavediff/pnm.hpp"
#include "wavediff/training.hpp"
#include "wavediff/wavelet.hpp"

using namespace wavediff;
using ag::Tape;
using ag::Value;

namespace {

struct Criterion {
  int id;
  std::string name;
  bool pass = true;
  double seconds = 0.0;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("FAILED: " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("wavediff_accept_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

GeneratorSpec gradcheck_spec() {  // 2-level config with 8x8 wavelet input
  GeneratorSpec s;
  s.levels = 2;
  s.base_channels = 8;
  s.channel_mult = {1, 2};
  s.attention_resolutions = {4};
  s.latent_dim = 8;
  s.latent_embed_dim = 16;
  s.latent_mapping_layers = 2;
  s.image_channels = 1;
  s.image_resolution = 16;
  return s;
}

GeneratorSpec reference_spec() {  // criterion-7 training config
  GeneratorSpec s;
  s.levels = 2;
  s.base_channels = 16;
  s.channel_mult = {1, 2};
  s.attention_resolutions = {};
  s.latent_dim = 100;
  s.latent_embed_dim = 256;
  s.latent_mapping_layers = 4;
  s.image_channels = 3;
  s.image_resolution = 32;
  return s;
}

TrainConfig reference_train_config() {
  TrainConfig cfg;  // T=4 schedule passed separately
  cfg.lr_g = 1.6e-4;
  cfg.lr_d = 1.25e-4;
  cfg.batch = 16;
  cfg.epochs = 20;
  cfg.lambda_rec = 1.0;
  cfg.ema_decay = 0.99;
  cfg.r1_gamma = 0.05;
  cfg.r1_every = 4;
  cfg.seed = 0;
  cfg.eval_every = 128;
  cfg.eval_samples = 256;
  return cfg;
}

// --------------------------------------------------------------------------

void criterion1_wavelet_exactness(Criterion& c) {
  RngStream rng(101, "accept.wavelet");
  for (int trial = 0; trial < 1000; ++trial) {
    const int64_t b = 1 + rng.uniform_index(4);
    const int64_t ch = 1 + rng.uniform_index(3);
    const int64_t h = 2 * (1 + rng.uniform_index(32));
    const int64_t w = 2 * (1 + rng.uniform_index(32));
    NDTensor x = rng.normal_tensor({b, ch, h, w});
    NDTensor packed = dwt_packed(x);
    const double rec_err = max_abs_diff(idwt_packed(packed), x);
    if (rec_err >= 1e-10) {
      c.require(false, "reconstruction error " + std::to_string(rec_err) + " at shape " +
                           shape_str(x.shape()));
      return;
    }
    const double nx = l2_norm(x);
    const double parseval = std::fabs(l2_norm(packed) - nx) / nx;
    if (parseval >= 1e-9) {
      c.require(false, "Parseval error " + std::to_string(parseval));
      return;
    }
  }
  c.note("1000 random tensors up to 4x3x64x64");
}

void criterion2_gradients(Criterion& c) {
  RngStream rng(202, "accept.grad");
  GradCheckOptions opt;  // tolerance 1e-4, h = 1e-5

  auto check = [&](const GradCheckReport& rep, const std::string& what) {
    for (const auto& e : rep.entries) {
      c.require(e.pass, what + "/" + e.name + " rel err " + std::to_string(e.max_rel_err));
    }
  };

  {  // conv2d, stride 1 and 2
    NDTensor x = rng.normal_tensor({2, 2, 5, 5});
    NDTensor w = rng.normal_tensor({3, 2, 3, 3});
    NDTensor b = rng.normal_tensor({3});
    for (int stride : {1, 2}) {
      auto f = [stride](Tape& t, const std::vector<Value>& p) {
        return ag::mean_all(ag::tanh_op(ag::conv2d(p[0], p[1], p[2], stride, 1)));
      };
      check(gradcheck(f, {{"x", x}, {"w", w}, {"b", b}}, opt),
            "conv2d_s" + std::to_string(stride));
    }
  }
  {  // dense
    NDTensor x = rng.normal_tensor({3, 4});
    NDTensor w = rng.normal_tensor({5, 4});
    NDTensor b = rng.normal_tensor({5});
    auto f = [](Tape& t, const std::vector<Value>& p) {
      return ag::mean_all(ag::silu(ag::dense(p[0], p[1], p[2])));
    };
    check(gradcheck(f, {{"x", x}, {"w", w}, {"b", b}}, opt), "dense");
  }
  {  // elementwise family
    NDTensor x = rng.normal_tensor({3, 6});
    NDTensor y = rng.normal_tensor({3, 6});
    auto f = [](Tape& t, const std::vector<Value>& p) {
      Value h = ag::add(ag::mul(p[0], p[1]), ag::scale(p[0], 0.3));
      h = ag::add(ag::silu(h), ag::leaky_relu(ag::tanh_op(h)));
      return ag::mean_all(ag::add(h, ag::softplus(ag::abs_op(p[1]))));
    };
    check(gradcheck(f, {{"x", x}, {"y", y}}, opt), "elementwise");
  }
  {  // group_norm
    NDTensor x = rng.normal_tensor({2, 4, 3, 3});
    NDTensor gm = rng.normal_tensor({4});
    NDTensor bt = rng.normal_tensor({4});
    auto f = [](Tape& t, const std::vector<Value>& p) {
      return ag::mean_all(ag::mul(ag::group_norm(p[0], 2, p[1], p[2]), p[0]));
    };
    check(gradcheck(f, {{"x", x}, {"gamma", gm}, {"beta", bt}}, opt), "group_norm");
  }
  {  // self_attention
    NDTensor x = rng.normal_tensor({1, 4, 2, 2});
    NDTensor wq = rng.normal_tensor({4, 4, 1, 1});
    NDTensor wk = rng.normal_tensor({4, 4, 1, 1});
    NDTensor wv = rng.normal_tensor({4, 4, 1, 1});
    NDTensor wo = rng.normal_tensor({4, 4, 1, 1});
    auto f = [](Tape& t, const std::vector<Value>& p) {
      return ag::mean_all(self_attention(p[0], p[1], p[2], p[3], p[4]));
    };
    check(gradcheck(f, {{"x", x}, {"wq", wq}, {"wk", wk}, {"wv", wv}, {"wo", wo}}, opt),
          "self_attention");
  }
  {  // dwt / idwt: linear maps, exact at 1e-6
    GradCheckOptions wopt = opt;
    wopt.tolerance = 1e-6;
    NDTensor x = rng.normal_tensor({1, 2, 4, 4});
    NDTensor proj = rng.normal_tensor({1, 8, 2, 2});
    auto f = [&](Tape& t, const std::vector<Value>& p) {
      return ag::sum_all(ag::mul(ag::haar_dwt(p[0]), t.constant(proj)));
    };
    check(gradcheck(f, {{"x", x}}, wopt), "dwt");
    NDTensor y = rng.normal_tensor({1, 8, 2, 2});
    NDTensor proj2 = rng.normal_tensor({1, 2, 4, 4});
    auto fi = [&](Tape& t, const std::vector<Value>& p) {
      return ag::sum_all(ag::mul(ag::haar_idwt(p[0]), t.constant(proj2)));
    };
    check(gradcheck(fi, {{"y", y}}, wopt), "idwt");
  }

  {  // full generator at the 2-level, 8-channel, 8x8-wavelet-input config
    GeneratorSpec spec = gradcheck_spec();
    Generator gen(spec, 11);
    std::vector<std::pair<std::string, NDTensor>> params;
    for (const auto& name : gen.params().names()) params.emplace_back(name, gen.params().at(name));
    NDTensor y = rng.normal_tensor({1, 4, 8, 8});
    NDTensor z = rng.normal_tensor({1, 8});
    GradCheckOptions nopt = opt;
    nopt.max_coords = 2;
    NDTensor proj = rng.normal_tensor({1, 4, 8, 8});
    auto f = [&](Tape& tape, const std::vector<Value>& leaves) {
      ParamLeaves ctx(tape, gen.params(), true);
      for (size_t i = 0; i < params.size(); ++i) ctx.set(params[i].first, leaves[i]);
      Value out = gen.forward(ctx, tape.constant(y), tape.constant(z), {2});
      return ag::sum_all(ag::mul(out, tape.constant(proj)));
    };
    GradCheckReport rep = gradcheck(f, params, nopt);
    int64_t coords = 0;
    for (const auto& e : rep.entries) coords += e.coords_checked;
    check(rep, "generator");
    c.note("generator: " + std::to_string(coords) + " coordinates across " +
           std::to_string(rep.entries.size()) + " parameters");
  }
  {  // full discriminator, gradient w.r.t. parameters and both inputs
    DiscriminatorSpec dspec = DiscriminatorSpec::mirror(gradcheck_spec());
    Discriminator disc(dspec, 12);
    std::vector<std::pair<std::string, NDTensor>> params;
    params.emplace_back("input.y_prev", rng.normal_tensor({1, 4, 8, 8}));
    params.emplace_back("input.y_t", rng.normal_tensor({1, 4, 8, 8}));
    for (const auto& name : disc.params().names()) {
      params.emplace_back(name, disc.params().at(name));
    }
    GradCheckOptions nopt = opt;
    nopt.max_coords = 2;
    auto f = [&](Tape& tape, const std::vector<Value>& leaves) {
      ParamLeaves ctx(tape, disc.params(), true);
      for (size_t i = 2; i < params.size(); ++i) ctx.set(params[i].first, leaves[i]);
      return ag::sum_all(disc.forward(ctx, leaves[0], leaves[1], {2}));
    };
    check(gradcheck(f, params, nopt), "discriminator");
  }
}

void criterion3_posterior_consistency(Criterion& c) {
  RngStream rng(303, "accept.posterior");
  const int64_t n = 100000;
  const double y0v = 0.6;
  NDTensor y0 = NDTensor::full({1, 1, 1, 1}, y0v);
  for (int T : {2, 4, 8}) {
    DiffusionSchedule sch = make_schedule(T);
    for (int t = 1; t <= T; ++t) {
      const std::string tag = "T=" + std::to_string(T) + " t=" + std::to_string(t);
      if (t == 1) {
        // the final step is deterministic, so the marginal collapses onto y0
        // exactly; moments would only measure summation roundoff here
        double dev = 0.0;
        for (int64_t i = 0; i < 1000; ++i) {
          NDTensor eps = rng.normal_tensor({1, 1, 1, 1});
          NDTensor yt = q_sample(y0, t, eps, sch);
          dev = std::max(dev, std::fabs(q_posterior_sample(y0, yt, t, sch, rng)[0] - y0v));
        }
        c.require(dev == 0.0, tag + " degenerate step deviates by " + std::to_string(dev));
        continue;
      }
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
      const double se_mean = std::sqrt(want_var / n);
      const double se_var = want_var * std::sqrt(2.0 / (n - 1));
      c.require(std::fabs(mean - want_mean) < 4.0 * se_mean,
                tag + " mean gap " + std::to_string(mean - want_mean));
      c.require(std::fabs(var - want_var) < 4.0 * se_var,
                tag + " var gap " + std::to_string(var - want_var));
    }
  }
}

void criterion4_architecture(Criterion& c) {
  RngStream rng(404, "accept.arch");

  {  // bottleneck preserves high subbands to 1e-10 under random weights
    ParamStore store;
    RngStream init(41, "init");
    std::vector<LayerDesc> plan;
    NetBuilder nb{&store, &init, &plan, true};
    auto block = FreqBottleneckBlock::create(nb, "mid", 6, 12, 10, 8, 8);
    Tape tape;
    ParamLeaves ctx(tape, store, false);
    NDTensor x = rng.normal_tensor({2, 6, 8, 8});
    Value out = block.forward(ctx, tape.constant(x), tape.constant(rng.normal_tensor({2, 12})),
                              tape.constant(rng.normal_tensor({2, 10})));
    SubbandSet sin = dwt(x);
    SubbandSet sout = dwt(out.val());
    c.require(max_abs_diff(sout.lh, sin.lh) <= 1e-10, "bottleneck lh drift");
    c.require(max_abs_diff(sout.hl, sin.hl) <= 1e-10, "bottleneck hl drift");
    c.require(max_abs_diff(sout.hh, sin.hh) <= 1e-10, "bottleneck hh drift");
  }

  // stash leak check + output shape across preset configs
  std::vector<GeneratorSpec> presets = {GeneratorSpec{}, gradcheck_spec(), reference_spec()};
  {
    GeneratorSpec gray;  // grayscale preset: 4-channel wavelet input
    gray.levels = 2;
    gray.base_channels = 16;
    gray.channel_mult = {1, 2};
    gray.attention_resolutions = {8};
    gray.latent_dim = 32;
    gray.latent_embed_dim = 64;
    gray.image_channels = 1;
    gray.image_resolution = 32;
    presets.push_back(gray);
  }
  for (size_t i = 0; i < presets.size(); ++i) {
    const GeneratorSpec& spec = presets[i];
    Generator gen(spec, 50 + i);
    NDTensor y = rng.normal_tensor(
        {2, spec.input_channels(), spec.input_resolution(), spec.input_resolution()});
    NDTensor z = rng.normal_tensor({2, spec.latent_dim});
    NDTensor out = gen.forward_tensor(y, z, {1, 2});
    c.require(out.shape() == y.shape(), "preset " + std::to_string(i) + " output shape " +
                                            shape_str(out.shape()) + " != " +
                                            shape_str(y.shape()));
    c.require(gen.stash_pushed() == spec.levels - 1,
              "preset " + std::to_string(i) + " stash depth");
    c.require(gen.stash_consumed() == gen.stash_pushed(),
              "preset " + std::to_string(i) + " stash leak");
  }
}

void criterion5_compute_reduction(Criterion& c) {
  {  // desk config: the artifact generator vs an equal-width pixel-space UNet
    GeneratorSpec desk;
    CostReport wavelet_cost = count_generator(desk);
    PlainUNetSpec pixel;
    pixel.levels = desk.levels;
    pixel.base_channels = desk.base_channels;
    pixel.channel_mult = desk.channel_mult;
    pixel.resblocks_per_scale = desk.resblocks_per_scale;
    pixel.attention_resolutions = desk.attention_resolutions;
    pixel.in_channels = desk.image_channels;
    pixel.out_channels = desk.image_channels;
    pixel.resolution = desk.image_resolution;
    CostReport pixel_cost = count_costs(plan_plain_unet(pixel));
    const double ratio = static_cast<double>(pixel_cost.flops) / wavelet_cost.flops;
    c.require(wavelet_cost.flops * 3 <= pixel_cost.flops,
              "desk ratio " + std::to_string(ratio) + " below 3x");
    c.note("desk: pixel/wavelet FLOPs ratio " + std::to_string(ratio));
  }
  {  // per-layer 4x reduction, provable from the closed form
    PlainUNetSpec pixel;
    pixel.levels = 3;
    pixel.base_channels = 32;
    pixel.channel_mult = {1, 2, 2};
    pixel.attention_resolutions = {};
    pixel.in_channels = 3;
    pixel.out_channels = 3;
    pixel.resolution = 32;
    PlainUNetSpec wavelet = pixel;
    wavelet.in_channels = 12;
    wavelet.out_channels = 12;
    wavelet.resolution = 16;
    auto pplan = plan_plain_unet(pixel);
    auto wplan = plan_plain_unet(wavelet);
    int compared = 0;
    for (size_t i = 0; i < pplan.size(); ++i) {
      const LayerDesc& a = pplan[i];
      const LayerDesc& b = wplan[i];
      if (a.kind != LayerKind::kConv || a.cin != b.cin || a.cout != b.cout) continue;
      const int64_t fa = 2 * a.cin * a.cout * a.kh * a.kw * a.out_h * a.out_w;
      const int64_t fb = 2 * b.cin * b.cout * b.kh * b.kw * b.out_h * b.out_w;
      c.require(fa == 4 * fb, "layer " + a.name + " not exactly 4x");
      ++compared;
    }
    c.require(compared > 20, "too few comparable layers");
  }
  {  // full-scale CIFAR-10 preset
    for (const ReferencePreset& p : reference_presets()) {
      if (p.name != "cifar10") continue;
      CostReport ours = count_costs(plan_plain_unet(p.ours));
      CostReport base = count_costs(plan_plain_unet(p.baseline));
      const double got = static_cast<double>(base.flops) / ours.flops;
      const double want = p.published_baseline_gflops / p.published_ours_gflops;
      c.require(got >= 0.75 * want && got <= 1.25 * want,
                "cifar10 modeled ratio " + std::to_string(got) + " vs published " +
                    std::to_string(want));
      c.note("cifar10: modeled ratio " + std::to_string(got) + ", published " + std::to_string(want));
    }
  }
}

void criterion6_few_step(Criterion& c) {
  // CIFAR-style preset: 4 steps; CelebA-style preset: 2 steps
  GeneratorSpec spec = gradcheck_spec();
  for (int T : {4, 2}) {
    Generator gen(spec, 60 + T);
    DiffusionSchedule sch = make_schedule(T);
    SamplerConfig scfg;
    scfg.steps = T;
    scfg.latent_dim = spec.latent_dim;
    scfg.image_channels = spec.image_channels;
    scfg.image_resolution = spec.image_resolution;
    scfg.seed = 7;
    DenoiserFn fn = [&](const NDTensor& y, const NDTensor& z, const std::vector<int>& t) {
      return gen.forward_tensor(y, z, t);
    };
    SampleResult res = sample(fn, sch, scfg, 3);
    c.require(res.generator_calls == T,
              "T=" + std::to_string(T) + " used " + std::to_string(res.generator_calls));
    c.require(gen.forward_calls() == T, "call counter mismatch");
  }
}

void criterion7_learning(Criterion& c, FitResult& out_fit, TrainConfig& out_cfg) {
  GeneratorSpec spec = reference_spec();
  TrainConfig cfg = reference_train_config();
  DiffusionSchedule sch = make_schedule(4);
  Dataset data = make_synthetic({"two-mode-gaussian-images", 32, 3, 1024, 123});
  TrainState st(spec, cfg.seed);

  const std::string dir = temp_dir("learning");
  const double t0 = now_s();
  FitResult res = fit(st, data, sch, cfg, dir, "acceptance-reference");
  const double train_secs = now_s() - t0;
  c.require(train_secs < 1800.0, "training took " + std::to_string(train_secs) + " s");
  c.note("trained " + std::to_string(res.history.size()) + " steps in " +
         std::to_string(train_secs) + " s");

  auto smooth = [&](size_t at) {
    const size_t lo = at >= 50 ? at - 50 : 0;
    double acc = 0.0;
    for (size_t i = lo; i < at; ++i) acc += res.history[i].rec;
    return acc / static_cast<double>(at - lo);
  };
  const double rec100 = smooth(100);
  const double rec_end = smooth(res.history.size());
  c.require(rec_end <= 0.5 * rec100, "smoothed L_rec " + std::to_string(rec100) + " -> " +
                                         std::to_string(rec_end) + " (needs >= 50% drop)");
  c.note("smoothed L_rec: " + std::to_string(rec100) + " @100 -> " + std::to_string(rec_end));

  EvalMetrics em = evaluate(st, data, sch, 256, 4242);
  c.require(em.mode_coverage >= 0.25, "mode coverage " + std::to_string(em.mode_coverage));
  c.require(em.moment_err <= 0.1, "moment error " + std::to_string(em.moment_err));
  c.note("mode coverage " + std::to_string(em.mode_coverage) + ", moment err " +
         std::to_string(em.moment_err));
  out_fit = res;
  out_cfg = cfg;
}

void criterion8_determinism(Criterion& c) {
  GeneratorSpec spec;
  spec.levels = 2;
  spec.base_channels = 8;
  spec.channel_mult = {1, 1};
  spec.attention_resolutions = {};
  spec.latent_dim = 8;
  spec.latent_embed_dim = 16;
  spec.latent_mapping_layers = 2;
  spec.image_channels = 3;
  spec.image_resolution = 8;
  DiffusionSchedule sch = make_schedule(4);
  Dataset data = make_synthetic({"two-mode-gaussian-images", 8, 3, 16, 9});
  TrainConfig cfg;
  cfg.batch = 8;
  cfg.epochs = 3;
  cfg.eval_samples = 4;
  cfg.checkpoint_every = 2;
  cfg.seed = 55;

  const std::string da = temp_dir("det_a");
  const std::string db = temp_dir("det_b");
  const std::string dc = temp_dir("det_resume");
  TrainState sa(spec, cfg.seed);
  fit(sa, data, sch, cfg, da, "det");
  TrainState sb(spec, cfg.seed);
  fit(sb, data, sch, cfg, db, "det");
  c.require(read_file(da + "/metrics.csv") == read_file(db + "/metrics.csv"),
            "metrics.csv differs between identical runs");
  c.require(read_file(da + "/ckpt_6.wdif") == read_file(db + "/ckpt_6.wdif"),
            "final checkpoints differ between identical runs");

  // identical seeds reproduce sample files bitwise
  auto sample_to = [&](TrainState& st, const std::string& dir) {
    SamplerConfig scfg;
    scfg.steps = 4;
    scfg.latent_dim = spec.latent_dim;
    scfg.image_channels = 3;
    scfg.image_resolution = 8;
    scfg.seed = 77;
    DenoiserFn fn = [&](const NDTensor& y, const NDTensor& z, const std::vector<int>& t) {
      return st.generator->forward_tensor(y, z, t, &st.ema);
    };
    save_image_batch(dir, sample(fn, sch, scfg, 4).images);
  };
  sample_to(sa, da + "/samples");
  sample_to(sb, db + "/samples");
  for (int i = 0; i < 4; ++i) {
    const std::string f = "/samples/sample_" + std::to_string(i) + ".ppm";
    c.require(read_file(da + f) == read_file(db + f), "sample files differ");
  }

  // checkpoint resume reproduces the interrupted run bitwise
  LoadedCheckpoint lc = load_checkpoint(da + "/ckpt_2.wdif");
  fit(*lc.state, data, sch, cfg, dc, "det");
  c.require(read_file(da + "/ckpt_6.wdif") == read_file(dc + "/ckpt_6.wdif"),
            "resumed run diverged from the uninterrupted one");
}

void criterion9_loss_identity(Criterion& c, const FitResult& fit_res, const TrainConfig& cfg) {
  c.require(TrainConfig{}.lambda_rec == 1.0, "default lambda is not 1");
  c.require(!fit_res.history.empty(), "no training history recorded");
  for (size_t i = 0; i < fit_res.history.size(); ++i) {
    const LossReport& r = fit_res.history[i];
    const double gap = std::fabs(r.g_total - (r.adv_g + cfg.lambda_rec * r.rec));
    if (gap > 1e-12) {
      c.require(false, "step " + std::to_string(i) + " identity gap " + std::to_string(gap));
      return;
    }
  }
  c.note(std::to_string(fit_res.history.size()) + " steps checked at 1e-12");
}

}  // namespace

int main() {
  std::vector<Criterion> criteria;
  FitResult fit_res;
  TrainConfig fit_cfg;

  auto run = [&](int id, const std::string& name, auto&& fn) {
    Criterion c{id, name};
    const double t0 = now_s();
    try {
      fn(c);
    } catch (const std::exception& e) {
      c.require(false, std::string("exception: ") + e.what());
    }
    c.seconds = now_s() - t0;
    std::printf("[%s] %d. %s (%.1f s)\n", c.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                c.seconds);
    for (const auto& n : c.notes) std::printf("        %s\n", n.c_str());
    std::fflush(stdout);
    criteria.push_back(std::move(c));
  };

  run(1, "wavelet exactness (reconstruction < 1e-10, Parseval < 1e-9)",
      criterion1_wavelet_exactness);
  run(2, "gradient correctness (all ops + full nets at 1e-4)", criterion2_gradients);
  run(3, "posterior consistency (T in {2,4,8}, 4 SE over 1e5 draws)",
      criterion3_posterior_consistency);
  run(4, "architectural contract (bottleneck, stash, shapes)", criterion4_architecture);
  run(5, "compute reduction (>=3x desk, published CIFAR ratio +-25%)", criterion5_compute_reduction);
  run(6, "few-step contract (exactly T generator calls)", criterion6_few_step);
  run(7, "end-to-end learning (two-mode dataset under 30 min)",
      [&](Criterion& c) { criterion7_learning(c, fit_res, fit_cfg); });
  run(8, "determinism (bitwise runs, samples, resume)", criterion8_determinism);
  run(9, "loss identity (L_G = L_adv_G + lambda*L_rec at 1e-12)",
      [&](Criterion& c) { criterion9_loss_identity(c, fit_res, fit_cfg); });

  // criterion runtime budgets pinned by the acceptance contract
  auto budget = [&](int id, double limit) {
    if (criteria[id - 1].seconds > limit) {
      criteria[id - 1].pass = false;
      std::printf("[FAIL] %d. exceeded runtime budget: %.1f s > %.0f s\n", id,
                  criteria[id - 1].seconds, limit);
    }
  };
  budget(1, 10.0);
  budget(2, 300.0);
  budget(3, 120.0);

  bool all = true;
  for (const auto& c : criteria) all = all && c.pass;
  std::printf("%s\n", all ? "ACCEPTANCE: ALL CRITERIA PASSED" : "ACCEPTANCE: FAILURES PRESENT");
  return all ? 0 : 1;
}
