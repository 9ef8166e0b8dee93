#include "wavediff/accounting.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace wavediff {

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kDense: return "dense";
    case LayerKind::kGroupNorm: return "group_norm";
    case LayerKind::kAttention: return "attention";
    case LayerKind::kDWT: return "dwt";
    case LayerKind::kIWT: return "iwt";
    case LayerKind::kStashPush: return "stash_push";
    case LayerKind::kStashPop: return "stash_pop";
    case LayerKind::kInput: return "input";
  }
  return "?";
}

int64_t layer_flops(const LayerDesc& d) {
  switch (d.kind) {
    case LayerKind::kConv:
      return 2 * d.cin * d.cout * d.kh * d.kw * d.out_h * d.out_w;
    case LayerKind::kDense:
      return 2 * d.cin * d.cout;
    case LayerKind::kAttention: {
      const int64_t hw = d.out_h * d.out_w;
      return 8 * d.out_c * d.out_c * hw + 4 * d.out_c * hw * hw;
    }
    case LayerKind::kDWT:
    case LayerKind::kIWT:
      // four stride-2 2x2 kernels per channel; out_c*out_h*out_w equals the
      // element count of the full-resolution side for both directions.
      return 8 * d.out_c * d.out_h * d.out_w;
    case LayerKind::kGroupNorm:
    case LayerKind::kStashPush:
    case LayerKind::kStashPop:
    case LayerKind::kInput:
      return 0;
  }
  throw std::invalid_argument("count_costs: unsupported layer kind");
}

}  // namespace

CostReport count_costs(const std::vector<LayerDesc>& plan) {
  CostReport report;
  int64_t prev_bytes = 0;
  int64_t stash_bytes = 0;
  for (const LayerDesc& d : plan) {
    const int64_t out_bytes = 4 * d.out_c * d.out_h * d.out_w;  // f32, batch 1
    switch (d.kind) {
      case LayerKind::kStashPush:
        stash_bytes += out_bytes;
        break;
      case LayerKind::kStashPop:
        stash_bytes -= out_bytes;
        break;
      case LayerKind::kInput:
        prev_bytes = out_bytes;
        break;
      default: {
        LayerCost row;
        row.name = d.name;
        row.kind = kind_name(d.kind);
        row.params = d.params;
        row.flops = layer_flops(d);
        row.out_bytes = out_bytes;
        report.params += row.params;
        report.flops += row.flops;
        report.activation_mem =
            std::max(report.activation_mem, prev_bytes + out_bytes + stash_bytes);
        prev_bytes = out_bytes;
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

CostReport count_generator(const GeneratorSpec& spec) {
  Generator g(spec, 0, /*materialize=*/false);
  return count_costs(g.plan());
}

CostReport count_discriminator(const DiscriminatorSpec& spec) {
  Discriminator d(spec, 0, /*materialize=*/false);
  return count_costs(d.plan());
}

std::vector<LayerDesc> plan_plain_unet(const PlainUNetSpec& spec) {
  if (static_cast<int>(spec.channel_mult.size()) != spec.levels) {
    throw std::invalid_argument("plain unet: channel_mult size must equal levels");
  }
  std::vector<LayerDesc> plan;
  ParamStore dummy;
  RngStream rng(0, "plan");
  NetBuilder nb{&dummy, &rng, &plan, /*materialize=*/false};

  const int M = spec.levels;
  const int64_t t_ch = 4 * spec.base_channels;
  const int64_t z_ch = spec.latent_embed_dim;
  const int R = spec.resolution;

  auto res_block = [&](const std::string& name, int64_t cin, int64_t cout, int res) {
    nb.group_norm(name + ".gn1", cin, res, res);
    nb.conv(name + ".conv1", cin, cout, 3, res, res);
    nb.dense(name + ".temb", t_ch, cout);
    nb.dense(name + ".zemb", z_ch, 2 * cout);
    nb.conv(name + ".conv2", cout, cout, 3, res, res);
    if (cin != cout) nb.conv(name + ".skip", cin, cout, 1, res, res);
  };
  auto attn_block = [&](const std::string& name, int64_t c, int res) {
    nb.group_norm(name + ".norm", c, res, res);
    nb.conv(name + ".q", c, c, 1, res, res);
    nb.conv(name + ".k", c, c, 1, res, res);
    nb.conv(name + ".v", c, c, 1, res, res);
    nb.conv(name + ".o", c, c, 1, res, res);
    nb.attention(name, c, res, res);
  };
  auto attend_at = [&](int res) {
    return std::find(spec.attention_resolutions.begin(), spec.attention_resolutions.end(), res) !=
           spec.attention_resolutions.end();
  };

  nb.dense("temb.mlp0", spec.base_channels, t_ch);
  nb.dense("temb.mlp1", t_ch, t_ch);
  for (int i = 0; i < spec.latent_mapping_layers; ++i) {
    nb.dense("zmap." + std::to_string(i), i == 0 ? spec.latent_dim : z_ch, z_ch);
  }

  nb.mark(LayerKind::kInput, spec.in_channels, R, R, "input");
  nb.conv("conv_in", spec.in_channels, spec.channels_at(0), 3, R, R);

  for (int i = 0; i < M; ++i) {
    const int res = R >> i;
    const int64_t ch = spec.channels_at(i);
    for (int j = 0; j < spec.resblocks_per_scale - 1; ++j) {
      res_block("enc" + std::to_string(i) + ".res" + std::to_string(j), ch, ch, res);
    }
    if (attend_at(res)) attn_block("enc" + std::to_string(i) + ".attn", ch, res);
    if (i < M - 1) {
      nb.mark(LayerKind::kStashPush, ch, res, res, "skip" + std::to_string(i));
      const int64_t ch_next = spec.channels_at(i + 1);
      res_block("down" + std::to_string(i) + ".res", ch, ch_next, res);
      // strided-conv downsampling in place of the wavelet split
      nb.conv("down" + std::to_string(i) + ".conv", ch_next, ch_next, 3, res / 2, res / 2);
      // strided-conv input pyramid in place of the wavelet residual shortcut
      nb.conv("pyr" + std::to_string(i + 1), spec.in_channels, ch_next, 3, res / 2, res / 2);
    }
  }

  const int bres = R >> (M - 1);
  const int64_t bch = spec.channels_at(M - 1);
  res_block("mid.block1", bch, bch, bres);
  attn_block("mid.attn", bch, bres);
  res_block("mid.block2", bch, bch, bres);

  for (int i = M - 2; i >= 0; --i) {
    const int res = R >> i;
    const int64_t ch = spec.channels_at(i);
    const int64_t ch_next = spec.channels_at(i + 1);
    nb.mark(LayerKind::kStashPop, ch, res, res, "skip" + std::to_string(i));
    // nearest-neighbor upsample followed by a 3x3 conv
    nb.conv("up" + std::to_string(i) + ".conv", ch_next, ch_next, 3, res, res);
    res_block("up" + std::to_string(i) + ".res", ch_next + ch, ch, res);
    for (int j = 0; j < spec.resblocks_per_scale - 1; ++j) {
      res_block("dec" + std::to_string(i) + ".res" + std::to_string(j), ch, ch, res);
    }
    if (attend_at(res)) attn_block("dec" + std::to_string(i) + ".attn", ch, res);
  }

  nb.group_norm("out.norm", spec.channels_at(0), R, R);
  nb.conv("out.conv", spec.channels_at(0), spec.out_channels, 3, R, R);
  return plan;
}

std::vector<ReferencePreset> reference_presets() {
  std::vector<ReferencePreset> presets;

  auto unet = [](int in_ch, int out_ch, int res, int levels, int base, std::vector<int> mult,
                 std::vector<int> attn) {
    PlainUNetSpec s;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.resolution = res;
    s.levels = levels;
    s.base_channels = base;
    s.channel_mult = std::move(mult);
    s.attention_resolutions = std::move(attn);
    return s;
  };

  presets.push_back({"cifar10",
                     unet(12, 12, 16, 3, 128, {1, 2, 2}, {}),
                     unet(3, 3, 32, 4, 128, {1, 2, 2, 2}, {16}),
                     1.67, 7.05});
  presets.push_back({"stl10",
                     unet(12, 12, 32, 4, 128, {1, 2, 2, 2}, {16}),
                     unet(3, 3, 64, 4, 128, {1, 2, 2, 2}, {16}),
                     7.15, 27.26});
  presets.push_back({"celebahq256",
                     unet(12, 12, 128, 5, 64, {1, 2, 2, 2, 4}, {16}),
                     unet(3, 3, 256, 6, 64, {1, 1, 2, 2, 4, 4}, {16}),
                     28.54, 70.82});
  presets.push_back({"celebahq512",
                     unet(12, 12, 256, 6, 64, {1, 1, 2, 2, 4, 4}, {16}),
                     unet(3, 3, 512, 6, 64, {1, 1, 2, 2, 4, 4}, {16}),
                     74.35, 282.00});
  return presets;
}

BenchStats bench_sampling(const Generator& g, const ParamStore* params,
                          const DiffusionSchedule& sch, int batch, int trials, int warmup,
                          uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("bench: trials must be >= 1");
  const GeneratorSpec& spec = g.spec();
  SamplerConfig scfg;
  scfg.steps = sch.steps;
  scfg.latent_dim = spec.latent_dim;
  scfg.image_channels = spec.image_channels;
  scfg.image_resolution = spec.image_resolution;

  BenchStats stats;
  stats.batch = batch;
  stats.trials = trials;
  stats.warmup = warmup;

  std::vector<double> times;
  for (int i = 0; i < warmup + trials; ++i) {
    scfg.seed = seed + static_cast<uint64_t>(i);
    const int64_t calls_before = g.forward_calls();
    const auto t0 = std::chrono::steady_clock::now();
    DenoiserFn fn = [&](const NDTensor& y, const NDTensor& z, const std::vector<int>& t) {
      return g.forward_tensor(y, z, t, params);
    };
    sample(fn, sch, scfg, batch);
    const auto t1 = std::chrono::steady_clock::now();
    stats.generator_calls_per_batch = g.forward_calls() - calls_before;
    if (i >= warmup) times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }

  std::sort(times.begin(), times.end());
  double total = 0.0;
  for (double t : times) total += t;
  const auto n = static_cast<int64_t>(times.size());
  auto nearest_rank = [&](double q) {
    const auto idx = static_cast<int64_t>(std::ceil(q * n)) - 1;
    return times[static_cast<size_t>(std::clamp<int64_t>(idx, 0, n - 1))];
  };
  stats.mean_s = total / static_cast<double>(n);
  stats.p50_s = nearest_rank(0.50);
  stats.p95_s = nearest_rank(0.95);
  stats.per_image_mean_s = stats.mean_s / batch;
  return stats;
}

}  // namespace wavediff
