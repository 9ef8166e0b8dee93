#pragma once

#include <string>
#include <vector>

#include "wavediff/diffusion.hpp"
#include "wavediff/networks.hpp"

namespace wavediff {

/// Cost conventions (FLOPs = 2 x multiply-accumulates, bias adds ignored):
///   conv       2*cin*cout*kh*kw*Hout*Wout
///   dense      2*in*out
///   attention  8*C^2*HW + 4*C*HW^2   (q/k/v/out projections + two token matmuls)
///   dwt/iwt    8*C*H*W on the full-resolution side (four stride-2 2x2 kernels)
///   norms/activations counted as zero.
/// Activation memory is the peak of (previous activation + layer output +
/// stashed tensors) in 32-bit elements at batch 1.
struct LayerCost {
  std::string name;
  std::string kind;
  int64_t params = 0;
  int64_t flops = 0;
  int64_t out_bytes = 0;
};

struct CostReport {
  int64_t params = 0;
  int64_t flops = 0;
  int64_t activation_mem = 0;  // bytes
  std::vector<LayerCost> rows;
};

/// Walks a layer plan; throws on a layer kind it has no formula for.
CostReport count_costs(const std::vector<LayerDesc>& plan);

CostReport count_generator(const GeneratorSpec& spec);
CostReport count_discriminator(const DiscriminatorSpec& spec);

/// Pixel-space UNet of identical widths/depth (strided-conv down, conv up,
/// strided-conv input pyramid). Exists for FLOPs comparison only.
struct PlainUNetSpec {
  int levels = 3;
  int base_channels = 32;
  std::vector<int> channel_mult = {1, 2, 2};
  int resblocks_per_scale = 2;
  std::vector<int> attention_resolutions;
  int in_channels = 3;
  int out_channels = 3;
  int resolution = 32;
  int latent_dim = 100;
  int latent_mapping_layers = 4;
  int latent_embed_dim = 256;

  int channels_at(int level) const { return base_channels * channel_mult[level]; }
};

std::vector<LayerDesc> plan_plain_unet(const PlainUNetSpec& spec);

/// Full-scale generator pairs with their published costs; counting only.
struct ReferencePreset {
  std::string name;
  PlainUNetSpec ours;      // wavelet-space input
  PlainUNetSpec baseline;  // pixel-space input
  double published_ours_gflops = 0.0;
  double published_baseline_gflops = 0.0;
};

std::vector<ReferencePreset> reference_presets();

struct BenchStats {
  int batch = 0, trials = 0, warmup = 0;
  double mean_s = 0.0, p50_s = 0.0, p95_s = 0.0;
  double per_image_mean_s = 0.0;
  int64_t generator_calls_per_batch = 0;
};

/// Wall-clock of the full sampling loop; warmup runs are measured but
/// excluded from the statistics.
BenchStats bench_sampling(const Generator& g, const ParamStore* params,
                          const DiffusionSchedule& sch, int batch, int trials, int warmup = 2,
                          uint64_t seed = 0);

}  // namespace wavediff
