#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "wavediff/accounting.hpp"
#include "wavediff/checkpoint.hpp"
#include "wavediff/config.hpp"
#include "wavediff/dataset.hpp"
#include "wavediff/gradcheck.hpp"
#include "wavediff/pnm.hpp"
#include "wavediff/wavelet.hpp"
#include "wavediff/wdt.hpp"

namespace {

using namespace wavediff;

std::optional<uint64_t> env_seed() {
  const char* s = std::getenv("WAVEDIFF_SEED");
  if (!s || !*s) return std::nullopt;
  return std::strtoull(s, nullptr, 10);
}

// Samples `num` images in fixed-size chunks so output n depends only on the
// seed, then writes sample_{i} files plus a manifest.
std::vector<std::string> run_sampler(TrainState& st, const DiffusionSchedule& sch, int num,
                                     uint64_t seed, bool use_ema, const std::string& out_dir) {
  const GeneratorSpec& spec = st.gspec();
  SamplerConfig scfg;
  scfg.steps = sch.steps;
  scfg.latent_dim = spec.latent_dim;
  scfg.image_channels = spec.image_channels;
  scfg.image_resolution = spec.image_resolution;

  NDTensor all({num, spec.image_channels, spec.image_resolution, spec.image_resolution});
  const int64_t plane = all.size() / num;
  const int chunk = 32;
  int done = 0, chunk_idx = 0;
  while (done < num) {
    const int n = std::min(chunk, num - done);
    scfg.seed = seed + static_cast<uint64_t>(chunk_idx);
    DenoiserFn fn = [&](const NDTensor& y, const NDTensor& z, const std::vector<int>& t) {
      return st.generator->forward_tensor(y, z, t, use_ema ? &st.ema : nullptr);
    };
    NDTensor imgs = sample(fn, sch, scfg, n).images;
    for (int64_t i = 0; i < imgs.size(); ++i) all[done * plane + i] = imgs[i];
    done += n;
    ++chunk_idx;
  }
  return save_image_batch(out_dir, all);
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<uint64_t> seed, std::optional<std::string> resume) {
  RunConfig cfg;
  std::unique_ptr<TrainState> state;
  std::string echo;
  if (resume) {
    LoadedCheckpoint lc = load_checkpoint(*resume);
    cfg = lc.config;
    echo = lc.config_text;
    state = std::move(lc.state);
    std::cerr << "resuming from " << *resume << " at step " << state->global_step << "\n";
  } else {
    cfg = load_config_file(config_path);
    echo = cfg.raw_text;
    if (seed) cfg.train.seed = *seed;
    state = std::make_unique<TrainState>(cfg.model, cfg.train.seed);
  }
  Dataset data = load_dataset(cfg.data_source, cfg.data_resolution, cfg.data_channels,
                              cfg.data_count, cfg.data_seed);
  DiffusionSchedule sch = cfg.schedule();
  FitResult res = fit(*state, data, sch, cfg.train, out_dir, echo);
  std::cout << "trained " << res.history.size() << " steps, wrote "
            << res.checkpoints_written.size() << " checkpoints and " << res.metrics_path << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt, int num, int steps, std::optional<uint64_t> seed,
               const std::string& out_dir, bool use_ema) {
  LoadedCheckpoint lc = load_checkpoint(ckpt);
  RunConfig cfg = lc.config;
  if (steps > 0) cfg.diffusion_steps = steps;
  DiffusionSchedule sch = cfg.schedule();
  const uint64_t s = seed.value_or(env_seed().value_or(cfg.train.seed));
  auto files = run_sampler(*lc.state, sch, num, s, use_ema, out_dir);

  nlohmann::json manifest;
  manifest["checkpoint"] = ckpt;
  manifest["count"] = num;
  manifest["steps"] = sch.steps;
  manifest["seed"] = s;
  manifest["ema"] = use_ema;
  manifest["files"] = files;
  std::ofstream mf(out_dir + "/manifest.json", std::ios::trunc);
  mf << manifest.dump(2) << "\n";
  std::cout << "wrote " << files.size() << " samples to " << out_dir << "\n";
  return 0;
}

void print_cost_row(std::ostream& os, const std::string& name, int resolution, int steps,
                    const CostReport& c, const BenchStats* bench) {
  os << name << "," << resolution << "," << steps << "," << c.params << "," << c.flops << ","
     << c.activation_mem;
  if (bench) {
    os << "," << bench->mean_s << "," << bench->p50_s << "," << bench->p95_s;
  } else {
    os << ",,,";
  }
  os << "\n";
}

int cmd_bench(const std::string& ckpt, const std::string& preset, int batch, int trials,
              int warmup, const std::string& out_csv, std::optional<uint64_t> seed) {
  std::ostringstream csv;
  csv << "config,resolution,steps,params,flops,mem,t_mean_s,t_p50_s,t_p95_s\n";

  if (!ckpt.empty()) {
    LoadedCheckpoint lc = load_checkpoint(ckpt);
    DiffusionSchedule sch = lc.config.schedule();
    CostReport c = count_generator(lc.config.model);
    BenchStats b = bench_sampling(*lc.state->generator, &lc.state->ema, sch, batch, trials,
                                  warmup, seed.value_or(0));
    print_cost_row(csv, ckpt, lc.config.model.image_resolution, sch.steps, c, &b);
  } else if (preset == "desk") {
    GeneratorSpec spec;  // desk defaults
    DiffusionSchedule sch = make_schedule(4);
    TrainState st(spec, seed.value_or(0));
    CostReport c = count_generator(spec);
    BenchStats b =
        bench_sampling(*st.generator, nullptr, sch, batch, trials, warmup, seed.value_or(0));
    print_cost_row(csv, "desk", spec.image_resolution, sch.steps, c, &b);

    PlainUNetSpec pixel;
    pixel.levels = spec.levels;
    pixel.base_channels = spec.base_channels;
    pixel.channel_mult = spec.channel_mult;
    pixel.attention_resolutions = spec.attention_resolutions;
    pixel.in_channels = spec.image_channels;
    pixel.out_channels = spec.image_channels;
    pixel.resolution = spec.image_resolution;
    CostReport cp = count_costs(plan_plain_unet(pixel));
    print_cost_row(csv, "desk-pixel-baseline", pixel.resolution, sch.steps, cp, nullptr);
  } else if (preset == "published") {
    for (const ReferencePreset& p : reference_presets()) {
      CostReport ours = count_costs(plan_plain_unet(p.ours));
      CostReport base = count_costs(plan_plain_unet(p.baseline));
      const int t = p.name.rfind("celebahq", 0) == 0 ? 2 : 4;
      print_cost_row(csv, p.name + "-ours", p.ours.resolution * 2, t, ours, nullptr);
      print_cost_row(csv, p.name + "-baseline", p.baseline.resolution, t, base, nullptr);
    }
  } else {
    throw std::invalid_argument("bench: pass --checkpoint or --preset desk|published");
  }

  if (out_csv.empty() || out_csv == "-") {
    std::cout << csv.str();
  } else {
    std::ofstream f(out_csv, std::ios::trunc);
    f << csv.str();
    std::cout << "wrote " << out_csv << "\n";
  }
  return 0;
}

int cmd_dwt(const std::string& in, const std::string& out, int levels) {
  NDTensor img = load_pnm(in);
  NDTensor batched = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
  save_wdt(out, multilevel_dwt(batched, levels));
  return 0;
}

int cmd_idwt(const std::string& in, const std::string& out, int levels) {
  NDTensor y = load_wdt(in);
  NDTensor x = multilevel_idwt(y, levels);
  if (x.dim(0) != 1) throw std::runtime_error("idwt: expected a single-image tensor");
  save_pnm(out, x.reshaped({x.dim(1), x.dim(2), x.dim(3)}));
  return 0;
}

int cmd_gradcheck(double tol, bool include_nets, uint64_t seed) {
  RngStream rng(seed, "gradcheck-cli");
  GradCheckOptions opt;
  opt.tolerance = tol;
  bool ok = true;

  auto print = [&](const GradCheckReport& r, const std::string& what) {
    for (const auto& e : r.entries) {
      std::cout << (e.pass ? "PASS " : "FAIL ") << what << "/" << e.name
                << " max_rel_err=" << e.max_rel_err << " coords=" << e.coords_checked << "\n";
      ok = ok && e.pass;
    }
  };

  {
    NDTensor x = rng.normal_tensor({2, 3, 6, 6});
    NDTensor w = rng.normal_tensor({4, 3, 3, 3});
    NDTensor b = rng.normal_tensor({4});
    auto f = [](ag::Tape& t, const std::vector<ag::Value>& p) {
      return ag::mean_all(ag::tanh_op(ag::conv2d(p[0], p[1], p[2], 1, 1)));
    };
    print(gradcheck(f, {{"x", x}, {"w", w}, {"b", b}}, opt), "conv2d");
  }
  {
    NDTensor x = rng.normal_tensor({3, 5});
    NDTensor w = rng.normal_tensor({4, 5});
    NDTensor b = rng.normal_tensor({4});
    auto f = [](ag::Tape& t, const std::vector<ag::Value>& p) {
      return ag::mean_all(ag::silu(ag::dense(p[0], p[1], p[2])));
    };
    print(gradcheck(f, {{"x", x}, {"w", w}, {"b", b}}, opt), "dense");
  }
  {
    NDTensor x = rng.normal_tensor({2, 4, 4, 4});
    NDTensor g = rng.normal_tensor({4});
    NDTensor b = rng.normal_tensor({4});
    auto f = [](ag::Tape& t, const std::vector<ag::Value>& p) {
      return ag::mean_all(ag::mul(ag::group_norm(p[0], 2, p[1], p[2]), p[0]));
    };
    print(gradcheck(f, {{"x", x}, {"gamma", g}, {"beta", b}}, opt), "group_norm");
  }
  {
    NDTensor x = rng.normal_tensor({1, 4, 2, 2});
    NDTensor wq = rng.normal_tensor({4, 4, 1, 1});
    NDTensor wk = rng.normal_tensor({4, 4, 1, 1});
    NDTensor wv = rng.normal_tensor({4, 4, 1, 1});
    NDTensor wo = rng.normal_tensor({4, 4, 1, 1});
    auto f = [](ag::Tape& t, const std::vector<ag::Value>& p) {
      return ag::mean_all(self_attention(p[0], p[1], p[2], p[3], p[4]));
    };
    print(gradcheck(f, {{"x", x}, {"wq", wq}, {"wk", wk}, {"wv", wv}, {"wo", wo}}, opt),
          "self_attention");
  }
  {
    GradCheckOptions wopt = opt;
    wopt.tolerance = 1e-6;  // linear map, exact
    NDTensor x = rng.normal_tensor({1, 2, 4, 4});
    auto f = [](ag::Tape& t, const std::vector<ag::Value>& p) {
      return ag::mean_all(ag::mul(ag::haar_dwt(p[0]), t.constant(NDTensor::full({1, 8, 2, 2}, 0.5))));
    };
    print(gradcheck(f, {{"x", x}}, wopt), "dwt");
  }

  if (include_nets) {
    GeneratorSpec gs;
    gs.levels = 2;
    gs.base_channels = 8;
    gs.channel_mult = {1, 2};
    gs.attention_resolutions = {4};
    gs.latent_dim = 8;
    gs.latent_embed_dim = 16;
    gs.image_channels = 1;
    gs.image_resolution = 16;  // 8x8 wavelet input
    Generator gen(gs, seed);
    std::vector<std::pair<std::string, NDTensor>> params;
    for (const auto& name : gen.params().names()) params.emplace_back(name, gen.params().at(name));
    NDTensor y = rng.normal_tensor({1, 4, 8, 8});
    NDTensor z = rng.normal_tensor({1, 8});
    GradCheckOptions nopt = opt;
    nopt.max_coords = 3;
    auto f = [&](ag::Tape& tape, const std::vector<ag::Value>& leaves) {
      ParamLeaves ctx(tape, gen.params(), true);
      // route the gradcheck's perturbed leaves through the cache
      size_t i = 0;
      for (const auto& [name, tensor] : params) ctx.set(name, leaves[i++]);
      return ag::mean_all(gen.forward(ctx, tape.constant(y), tape.constant(z), {2}));
    };
    print(gradcheck(f, params, nopt), "generator");
  }

  std::cout << (ok ? "gradcheck: all passed" : "gradcheck: FAILURES") << "\n";
  return ok ? 0 : 2;
}

int cmd_gen_data(const std::string& kind, int res, int channels, int count, uint64_t seed,
                 const std::string& out_dir) {
  Dataset d = make_synthetic({kind, res, channels, count, seed});
  auto files = save_image_batch(out_dir, d.images);
  std::cout << "wrote " << files.size() << " images to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wavelet-space few-step adversarial diffusion engine"};
  app.require_subcommand(1);

  std::optional<uint64_t> seed;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string train_config, train_out = "run", train_resume;
  train->add_option("--config", train_config, "run configuration file");
  train->add_option("--out", train_out, "output directory");
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_option("--seed", seed, "seed override");

  auto* smp = app.add_subcommand("sample", "sample images from a checkpoint");
  std::string smp_ckpt, smp_out = "samples";
  int smp_num = 16, smp_steps = 0;
  bool smp_raw = false;
  smp->add_option("--checkpoint", smp_ckpt)->required();
  smp->add_option("--num", smp_num, "number of images");
  smp->add_option("--steps", smp_steps, "override sampling steps");
  smp->add_option("--seed", seed);
  smp->add_option("--out", smp_out);
  smp->add_flag("--raw", smp_raw, "use raw weights instead of the EMA shadow");

  auto* bench = app.add_subcommand("bench", "parameter/FLOPs accounting and sampling wall-clock");
  std::string bench_ckpt, bench_preset = "desk", bench_out;
  int bench_batch = 16, bench_trials = 10, bench_warmup = 2;
  bench->add_option("--checkpoint", bench_ckpt);
  bench->add_option("--preset", bench_preset, "desk | published");
  bench->add_option("--batch", bench_batch);
  bench->add_option("--trials", bench_trials);
  bench->add_option("--warmup", bench_warmup);
  bench->add_option("--out", bench_out, "CSV path ('-' for stdout)");
  bench->add_option("--seed", seed);

  auto* dwt_cmd = app.add_subcommand("dwt", "image -> packed wavelet tensor (.wdt)");
  std::string dwt_in, dwt_out;
  int dwt_levels = 1;
  dwt_cmd->add_option("--in", dwt_in)->required();
  dwt_cmd->add_option("--out", dwt_out)->required();
  dwt_cmd->add_option("--levels", dwt_levels);

  auto* idwt_cmd = app.add_subcommand("idwt", "packed wavelet tensor -> image");
  std::string idwt_in, idwt_out;
  int idwt_levels = 1;
  idwt_cmd->add_option("--in", idwt_in)->required();
  idwt_cmd->add_option("--out", idwt_out)->required();
  idwt_cmd->add_option("--levels", idwt_levels);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  double gc_tol = 1e-4;
  bool gc_nets = false;
  gc->add_option("--tol", gc_tol);
  gc->add_flag("--net", gc_nets, "include the full generator");
  gc->add_option("--seed", seed);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_kind = "two-mode-gaussian-images", gen_out = "data";
  int gen_res = 32, gen_channels = 3, gen_count = 256;
  gen->add_option("--kind", gen_kind, "two-mode-gaussian-images | shapes | checkerboard");
  gen->add_option("--res", gen_res);
  gen->add_option("--channels", gen_channels);
  gen->add_option("--count", gen_count);
  gen->add_option("--seed", seed);
  gen->add_option("--out", gen_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  if (!seed) seed = env_seed();

  try {
    if (train->parsed()) {
      if (train_config.empty() && train_resume.empty()) {
        std::cerr << "train: need --config or --resume\n";
        return 1;
      }
      return cmd_train(train_config, train_out,  seed,
                       train_resume.empty() ? std::nullopt
                                            : std::optional<std::string>(train_resume));
    }
    if (smp->parsed()) return cmd_sample(smp_ckpt, smp_num, smp_steps, seed, smp_out, !smp_raw);
    if (bench->parsed()) {
      return cmd_bench(bench_ckpt, bench_preset, bench_batch, bench_trials, bench_warmup,
                       bench_out, seed);
    }
    if (dwt_cmd->parsed()) return cmd_dwt(dwt_in, dwt_out, dwt_levels);
    if (idwt_cmd->parsed()) return cmd_idwt(idwt_in, idwt_out, idwt_levels);
    if (gc->parsed()) return cmd_gradcheck(gc_tol, gc_nets, seed.value_or(17));
    if (gen->parsed()) return cmd_gen_data(gen_kind, gen_res, gen_channels, gen_count,
                                           seed.value_or(0), gen_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
