#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "wavediff/ops.hpp"
#include "wavediff/rng.hpp"

namespace wavediff {

// ---------------------------------------------------------------------------
// Parameter storage and per-tape leaf caching.
// ---------------------------------------------------------------------------

class ParamStore {
 public:
  NDTensor& add(const std::string& name, NDTensor t);
  NDTensor& at(const std::string& name);
  const NDTensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  int64_t total_size() const;
  bool empty() const { return order_.empty(); }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, NDTensor> index_;
};

/// Creates (and caches) one tape leaf per parameter, so repeated layer calls
/// within a forward pass share weights and gradients accumulate across uses.
struct ParamLeaves {
  ag::Tape* tape = nullptr;
  const ParamStore* store = nullptr;
  bool trainable = true;

  ParamLeaves(ag::Tape& t, const ParamStore& s, bool train)
      : tape(&t), store(&s), trainable(train) {}

  ag::Value leaf(const std::string& name);

  /// Pre-seeds the cache with an externally created leaf (gradient checking
  /// routes its perturbed tensors through here).
  void set(const std::string& name, const ag::Value& v) { cache_[name] = v; }

  /// After tape.backward(), collect per-parameter gradient tensors (zeros for
  /// parameters the loss never touched).
  std::unordered_map<std::string, NDTensor> grads(
      const std::unordered_map<int32_t, ag::Value>& gmap) const;

 private:
  std::unordered_map<std::string, ag::Value> cache_;
};

// ---------------------------------------------------------------------------
// Layer plan. Construction registers one record per layer; the accounting
// module walks the same records, which keeps analytic parameter counts
// identical to the live network by construction.
// ---------------------------------------------------------------------------

enum class LayerKind {
  kConv,
  kDense,
  kGroupNorm,
  kAttention,
  kDWT,
  kIWT,
  kStashPush,  // liveness marker: tensor parked for later consumption
  kStashPop,
  kInput,
};

struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  int64_t cin = 0, cout = 0, kh = 0, kw = 0;  // conv; dense uses cin/cout
  int64_t out_c = 0, out_h = 0, out_w = 0;    // activation shape at batch 1
  int64_t params = 0;
};

enum class WeightInit { kFanIn, kZero };

/// Shared registration context for building a network: parameter tensors,
/// RNG for initialization, and the layer plan. `materialize = false` records
/// the plan only (used for analytic cost accounting at full scale).
struct NetBuilder {
  ParamStore* store = nullptr;
  RngStream* init_rng = nullptr;
  std::vector<LayerDesc>* plan = nullptr;
  bool materialize = true;

  NDTensor init_tensor(Shape shape, WeightInit init, int64_t fan_in);
  void conv(const std::string& name, int64_t cin, int64_t cout, int64_t k, int64_t out_h,
            int64_t out_w, WeightInit init = WeightInit::kFanIn);
  void dense(const std::string& name, int64_t in, int64_t out, WeightInit init = WeightInit::kFanIn);
  void group_norm(const std::string& name, int64_t c, int64_t out_h, int64_t out_w);
  void attention(const std::string& name, int64_t c, int64_t h, int64_t w);
  void mark(LayerKind kind, int64_t c, int64_t h, int64_t w, const std::string& name = "");
};

// ---------------------------------------------------------------------------
// Specs (desk defaults; presets for other scales live in the accounting
// module and the config file).
// ---------------------------------------------------------------------------

struct GeneratorSpec {
  int levels = 3;
  int base_channels = 32;
  std::vector<int> channel_mult = {1, 2, 2};
  int resblocks_per_scale = 2;
  std::vector<int> attention_resolutions = {8};  // wavelet-space feature sizes
  int latent_dim = 100;
  int latent_mapping_layers = 4;
  int latent_embed_dim = 256;
  int image_channels = 3;
  int image_resolution = 32;  // pixel space

  int time_embed_channels() const { return 4 * base_channels; }
  int input_channels() const { return 4 * image_channels; }
  int input_resolution() const { return image_resolution / 2; }
  int channels_at(int level) const { return base_channels * channel_mult[level]; }
  bool attend_at(int resolution) const;
  void validate() const;
};

struct DiscriminatorSpec {
  int levels = 3;
  int base_channels = 32;
  std::vector<int> channel_mult = {1, 2, 2};
  int image_channels = 3;
  int image_resolution = 32;

  int time_embed_channels() const { return 4 * base_channels; }
  int input_channels() const { return 8 * image_channels; }  // (y_{t-1}, y_t) pair
  int input_resolution() const { return image_resolution / 2; }
  int channels_at(int level) const { return base_channels * channel_mult[level]; }
  void validate() const;

  static DiscriminatorSpec mirror(const GeneratorSpec& g);
};

// ---------------------------------------------------------------------------
// Free-standing building blocks (also exercised directly by tests).
// ---------------------------------------------------------------------------

/// Single-head softmax(Q K^T / sqrt(C)) V over the HW token axis, with output
/// projection and residual add. Weights are 1x1 conv kernels [C,C,1,1].
ag::Value self_attention(const ag::Value& x, const ag::Value& wq, const ag::Value& wk,
                         const ag::Value& wv, const ag::Value& wo);

/// Sinusoidal embedding of integer step indices, one row per sample.
NDTensor sinusoidal_time_embedding(const std::vector<int>& t, int dim);

/// Largest divisor of c that is <= 32; group count used by every norm layer.
/// The two-argument form also requires at least two elements per group at the
/// given spatial size, so normalization never degenerates to the zero map.
int norm_groups(int64_t c);
int norm_groups(int64_t c, int64_t hw);

// ---------------------------------------------------------------------------
// Layer/block classes. Each holds parameter names; `create` registers
// parameters and plan rows on the builder, `operator()`/`forward` builds the
// graph through a ParamLeaves context.
// ---------------------------------------------------------------------------

struct Conv2dLayer {
  std::string w, b;
  int stride = 1, pad = 1;
  static Conv2dLayer create(NetBuilder& nb, const std::string& name, int64_t cin, int64_t cout,
                            int64_t k, int stride, int pad, int64_t out_h, int64_t out_w,
                            WeightInit init = WeightInit::kFanIn);
  ag::Value operator()(ParamLeaves& ctx, const ag::Value& x) const;
};

struct DenseLayer {
  std::string w, b;
  static DenseLayer create(NetBuilder& nb, const std::string& name, int64_t in, int64_t out,
                           WeightInit init = WeightInit::kFanIn);
  ag::Value operator()(ParamLeaves& ctx, const ag::Value& x) const;
};

struct GroupNormLayer {
  std::string gamma, beta;
  int groups = 1;
  static GroupNormLayer create(NetBuilder& nb, const std::string& name, int64_t c, int64_t out_h,
                               int64_t out_w);
  ag::Value operator()(ParamLeaves& ctx, const ag::Value& x) const;
};

/// norm -> silu -> conv -> (+time bias) -> adaptive norm (z) -> silu -> conv,
/// plus identity or 1x1 skip.
struct ResBlock {
  GroupNormLayer gn1;
  Conv2dLayer conv1;
  DenseLayer time_proj;
  DenseLayer z_proj;  // produces [scale, shift], 2*cout
  Conv2dLayer conv2;
  std::optional<Conv2dLayer> skip;
  int64_t cin = 0, cout = 0;
  int groups2 = 1;

  static ResBlock create(NetBuilder& nb, const std::string& name, int64_t cin, int64_t cout,
                         int64_t t_ch, int64_t z_ch, int64_t h, int64_t w);
  ag::Value forward(ParamLeaves& ctx, const ag::Value& x, const ag::Value& t_emb,
                    const ag::Value& z_emb) const;
};

struct AttentionBlock {
  GroupNormLayer norm;
  std::string wq, wk, wv, wo;
  int64_t channels = 0;

  static AttentionBlock create(NetBuilder& nb, const std::string& name, int64_t c, int64_t h,
                               int64_t w);
  ag::Value forward(ParamLeaves& ctx, const ag::Value& x) const;
};

struct FreqDownBlock {
  ResBlock block;
  int64_t cout = 0;

  static FreqDownBlock create(NetBuilder& nb, const std::string& name, int64_t cin, int64_t cout,
                              int64_t t_ch, int64_t z_ch, int64_t h, int64_t w);
  /// Returns (ll features at half resolution, packed [lh,hl,hh] highs).
  std::pair<ag::Value, ag::Value> forward(ParamLeaves& ctx, const ag::Value& x,
                                          const ag::Value& t_emb, const ag::Value& z_emb) const;
};

struct FreqUpBlock {
  Conv2dLayer fuse;  // 1x1 over [ll-path, stored highs]
  ResBlock block;
  int64_t c = 0;  // channel count of the incoming ll path

  static FreqUpBlock create(NetBuilder& nb, const std::string& name, int64_t c, int64_t skip_ch,
                            int64_t cout, int64_t t_ch, int64_t z_ch, int64_t h, int64_t w);
  ag::Value forward(ParamLeaves& ctx, const ag::Value& x, const ag::Value& highs,
                    const ag::Value& skip, const ag::Value& t_emb, const ag::Value& z_emb) const;
};

/// Low subband through a ResBlock, high subbands forwarded untouched.
struct FreqBottleneckBlock {
  ResBlock block;
  int64_t c = 0;

  static FreqBottleneckBlock create(NetBuilder& nb, const std::string& name, int64_t c,
                                    int64_t t_ch, int64_t z_ch, int64_t h, int64_t w);
  ag::Value forward(ParamLeaves& ctx, const ag::Value& x, const ag::Value& t_emb,
                    const ag::Value& z_emb) const;
};

/// dwt -> pack -> learned 1x1 projection; `levels` repeats the packet
/// decomposition before projecting.
struct WaveletDownsampleLayer {
  Conv2dLayer proj;
  int levels = 1;

  static WaveletDownsampleLayer create(NetBuilder& nb, const std::string& name, int64_t cin,
                                       int levels, int64_t cout, int64_t out_h, int64_t out_w);
  ag::Value forward(ParamLeaves& ctx, const ag::Value& x) const;
};

// ---------------------------------------------------------------------------
// Generator and discriminator.
// ---------------------------------------------------------------------------

class Generator {
 public:
  Generator(GeneratorSpec spec, uint64_t init_seed, bool materialize = true);

  const GeneratorSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const std::vector<LayerDesc>& plan() const { return plan_; }

  /// y_t: [B, 4*image_channels, R, R]; z: [B, latent_dim]; one t per sample.
  ag::Value forward(ParamLeaves& ctx, const ag::Value& y_t, const ag::Value& z,
                    const std::vector<int>& t) const;

  /// Convenience wrapper building a private tape; used by the sampler.
  NDTensor forward_tensor(const NDTensor& y_t, const NDTensor& z, const std::vector<int>& t,
                          const ParamStore* override_params = nullptr) const;

  int64_t forward_calls() const { return forward_calls_; }
  int64_t stash_pushed() const { return stash_pushed_; }
  int64_t stash_consumed() const { return stash_consumed_; }

 private:
  GeneratorSpec spec_;
  ParamStore params_;
  std::vector<LayerDesc> plan_;

  Conv2dLayer conv_in_;
  std::vector<std::vector<ResBlock>> enc_blocks_;
  std::vector<std::optional<AttentionBlock>> enc_attn_;
  std::vector<FreqDownBlock> down_blocks_;
  std::vector<WaveletDownsampleLayer> freq_residuals_;
  FreqBottleneckBlock mid_bottleneck1_, mid_bottleneck2_;
  AttentionBlock mid_attn_;
  std::vector<FreqUpBlock> up_blocks_;
  std::vector<std::vector<ResBlock>> dec_blocks_;
  std::vector<std::optional<AttentionBlock>> dec_attn_;
  GroupNormLayer gn_out_;
  Conv2dLayer conv_out_;

  DenseLayer time_mlp0_, time_mlp1_;
  std::vector<DenseLayer> latent_mlp_;

  mutable int64_t forward_calls_ = 0;
  mutable int64_t stash_pushed_ = 0;
  mutable int64_t stash_consumed_ = 0;
};

class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, uint64_t init_seed, bool materialize = true);

  const DiscriminatorSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const std::vector<LayerDesc>& plan() const { return plan_; }

  /// y_prev, y_t: [B, 4*image_channels, R, R]; returns [B, 1] logits.
  ag::Value forward(ParamLeaves& ctx, const ag::Value& y_prev, const ag::Value& y_t,
                    const std::vector<int>& t) const;

 private:
  DiscriminatorSpec spec_;
  ParamStore params_;
  std::vector<LayerDesc> plan_;

  struct DBlock {
    Conv2dLayer conv1;
    DenseLayer time_proj;
    Conv2dLayer conv2;
  };

  Conv2dLayer conv_in_;
  std::vector<DBlock> blocks_;
  std::vector<Conv2dLayer> downs_;
  DenseLayer head_;
  DenseLayer time_mlp0_, time_mlp1_;
};

}  // namespace wavediff
