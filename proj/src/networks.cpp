#include "wavediff/networks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wavediff {

using ag::Value;

// ---------------------------------------------------------------------------
// ParamStore / ParamLeaves
// ---------------------------------------------------------------------------

NDTensor& ParamStore::add(const std::string& name, NDTensor t) {
  if (index_.count(name)) throw std::logic_error("ParamStore: duplicate parameter " + name);
  order_.push_back(name);
  return index_.emplace(name, std::move(t)).first->second;
}

NDTensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
  return it->second;
}

const NDTensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
  return it->second;
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& name : order_) n += index_.at(name).size();
  return n;
}

Value ParamLeaves::leaf(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  Value v = tape->leaf(store->at(name), trainable);
  cache_.emplace(name, v);
  return v;
}

std::unordered_map<std::string, NDTensor> ParamLeaves::grads(
    const std::unordered_map<int32_t, Value>& gmap) const {
  std::unordered_map<std::string, NDTensor> out;
  for (const auto& [name, v] : cache_) {
    auto it = gmap.find(v.id);
    if (it != gmap.end()) {
      out.emplace(name, it->second.val());
    } else {
      out.emplace(name, NDTensor::zeros(v.shape()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// NetBuilder
// ---------------------------------------------------------------------------

NDTensor NetBuilder::init_tensor(Shape shape, WeightInit init, int64_t fan_in) {
  NDTensor t(std::move(shape));
  if (init == WeightInit::kFanIn) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = stddev * init_rng->normal();
  }
  return t;
}

void NetBuilder::conv(const std::string& name, int64_t cin, int64_t cout, int64_t k,
                      int64_t out_h, int64_t out_w, WeightInit init) {
  if (materialize) {
    store->add(name + ".w", init_tensor({cout, cin, k, k}, init, cin * k * k));
    store->add(name + ".b", NDTensor::zeros({cout}));
  }
  plan->push_back({name, LayerKind::kConv, cin, cout, k, k, cout, out_h, out_w,
                   cout * cin * k * k + cout});
}

void NetBuilder::dense(const std::string& name, int64_t in, int64_t out, WeightInit init) {
  if (materialize) {
    store->add(name + ".w", init_tensor({out, in}, init, in));
    store->add(name + ".b", NDTensor::zeros({out}));
  }
  plan->push_back({name, LayerKind::kDense, in, out, 0, 0, out, 1, 1, out * in + out});
}

void NetBuilder::group_norm(const std::string& name, int64_t c, int64_t out_h, int64_t out_w) {
  if (materialize) {
    store->add(name + ".g", NDTensor::full({c}, 1.0));
    store->add(name + ".b", NDTensor::zeros({c}));
  }
  plan->push_back({name, LayerKind::kGroupNorm, c, c, 0, 0, c, out_h, out_w, 2 * c});
}

void NetBuilder::attention(const std::string& name, int64_t c, int64_t h, int64_t w) {
  plan->push_back({name, LayerKind::kAttention, c, c, 0, 0, c, h, w, 0});
}

void NetBuilder::mark(LayerKind kind, int64_t c, int64_t h, int64_t w, const std::string& name) {
  plan->push_back({name, kind, c, c, 0, 0, c, h, w, 0});
}

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

bool GeneratorSpec::attend_at(int resolution) const {
  return std::find(attention_resolutions.begin(), attention_resolutions.end(), resolution) !=
         attention_resolutions.end();
}

void GeneratorSpec::validate() const {
  if (levels < 1) throw std::invalid_argument("GeneratorSpec: levels must be >= 1");
  if (static_cast<int>(channel_mult.size()) != levels) {
    throw std::invalid_argument("GeneratorSpec: channel_mult size must equal levels");
  }
  if (base_channels < 1 || latent_dim < 1 || latent_embed_dim < 1 || latent_mapping_layers < 1) {
    throw std::invalid_argument("GeneratorSpec: channel/latent sizes must be positive");
  }
  if (resblocks_per_scale < 1) {
    throw std::invalid_argument("GeneratorSpec: resblocks_per_scale must be >= 1");
  }
  if (image_resolution % 2 != 0) {
    throw std::invalid_argument("GeneratorSpec: image resolution must be even");
  }
  const int r = input_resolution();
  if (r % (1 << levels) != 0) {
    throw std::invalid_argument(
        "GeneratorSpec: wavelet input resolution " + std::to_string(r) +
        " must be divisible by 2^levels so every block sees even extents");
  }
}

void DiscriminatorSpec::validate() const {
  if (levels < 1) throw std::invalid_argument("DiscriminatorSpec: levels must be >= 1");
  if (static_cast<int>(channel_mult.size()) != levels) {
    throw std::invalid_argument("DiscriminatorSpec: channel_mult size must equal levels");
  }
  if (image_resolution % 2 != 0 || input_resolution() % (1 << (levels - 1)) != 0) {
    throw std::invalid_argument("DiscriminatorSpec: resolution not divisible by network depth");
  }
}

DiscriminatorSpec DiscriminatorSpec::mirror(const GeneratorSpec& g) {
  DiscriminatorSpec d;
  d.levels = g.levels;
  d.base_channels = g.base_channels;
  d.channel_mult = g.channel_mult;
  d.image_channels = g.image_channels;
  d.image_resolution = g.image_resolution;
  return d;
}

// ---------------------------------------------------------------------------
// Free-standing pieces
// ---------------------------------------------------------------------------

int norm_groups(int64_t c) { return norm_groups(c, std::numeric_limits<int64_t>::max()); }

int norm_groups(int64_t c, int64_t hw) {
  for (int64_t g = std::min<int64_t>(32, c); g > 1; --g) {
    if (c % g == 0 && (c / g) * hw >= 2) return static_cast<int>(g);
  }
  return 1;
}

NDTensor sinusoidal_time_embedding(const std::vector<int>& t, int dim) {
  if (dim < 2) throw std::invalid_argument("time embedding dim must be >= 2");
  const int half = dim / 2;
  NDTensor emb({static_cast<int64_t>(t.size()), dim});
  for (size_t b = 0; b < t.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
      emb.at2(static_cast<int64_t>(b), i) = std::sin(t[b] * freq);
      emb.at2(static_cast<int64_t>(b), half + i) = std::cos(t[b] * freq);
    }
    if (dim % 2 == 1) emb.at2(static_cast<int64_t>(b), dim - 1) = 0.0;
  }
  return emb;
}

namespace {

Value attention_core(const Value& q, const Value& k, const Value& v) {
  const Shape& s = q.shape();
  const int64_t B = s[0], C = s[1], T = s[2] * s[3];
  Value qf = ag::reshape(q, {B, C, T});
  Value kf = ag::reshape(k, {B, C, T});
  Value vf = ag::reshape(v, {B, C, T});
  Value scores = ag::scale(ag::bmm(qf, kf, true, false), 1.0 / std::sqrt(static_cast<double>(C)));
  Value attn = ag::softmax_last(scores);            // [B,T,T], rows index queries
  Value out = ag::bmm(vf, attn, false, true);       // [B,C,T]
  return ag::reshape(out, s);
}

}  // namespace

Value self_attention(const Value& x, const Value& wq, const Value& wk, const Value& wv,
                     const Value& wo) {
  Value none;
  Value q = ag::conv2d(x, wq, none, 1, 0);
  Value k = ag::conv2d(x, wk, none, 1, 0);
  Value v = ag::conv2d(x, wv, none, 1, 0);
  Value out = ag::conv2d(attention_core(q, k, v), wo, none, 1, 0);
  return ag::add(x, out);
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Conv2dLayer Conv2dLayer::create(NetBuilder& nb, const std::string& name, int64_t cin, int64_t cout,
                                int64_t k, int stride, int pad, int64_t out_h, int64_t out_w,
                                WeightInit init) {
  nb.conv(name, cin, cout, k, out_h, out_w, init);
  Conv2dLayer l;
  l.w = name + ".w";
  l.b = name + ".b";
  l.stride = stride;
  l.pad = pad;
  return l;
}

Value Conv2dLayer::operator()(ParamLeaves& ctx, const Value& x) const {
  return ag::conv2d(x, ctx.leaf(w), ctx.leaf(b), stride, pad);
}

DenseLayer DenseLayer::create(NetBuilder& nb, const std::string& name, int64_t in, int64_t out,
                              WeightInit init) {
  nb.dense(name, in, out, init);
  DenseLayer l;
  l.w = name + ".w";
  l.b = name + ".b";
  return l;
}

Value DenseLayer::operator()(ParamLeaves& ctx, const Value& x) const {
  return ag::dense(x, ctx.leaf(w), ctx.leaf(b));
}

GroupNormLayer GroupNormLayer::create(NetBuilder& nb, const std::string& name, int64_t c,
                                      int64_t out_h, int64_t out_w) {
  nb.group_norm(name, c, out_h, out_w);
  GroupNormLayer l;
  l.gamma = name + ".g";
  l.beta = name + ".b";
  l.groups = norm_groups(c, out_h * out_w);
  return l;
}

Value GroupNormLayer::operator()(ParamLeaves& ctx, const Value& x) const {
  return ag::group_norm(x, groups, ctx.leaf(gamma), ctx.leaf(beta));
}

ResBlock ResBlock::create(NetBuilder& nb, const std::string& name, int64_t cin, int64_t cout,
                          int64_t t_ch, int64_t z_ch, int64_t h, int64_t w) {
  ResBlock b;
  b.cin = cin;
  b.cout = cout;
  b.groups2 = norm_groups(cout, h * w);
  b.gn1 = GroupNormLayer::create(nb, name + ".gn1", cin, h, w);
  b.conv1 = Conv2dLayer::create(nb, name + ".conv1", cin, cout, 3, 1, 1, h, w);
  b.time_proj = DenseLayer::create(nb, name + ".temb", t_ch, cout);
  b.z_proj = DenseLayer::create(nb, name + ".zemb", z_ch, 2 * cout);
  b.conv2 = Conv2dLayer::create(nb, name + ".conv2", cout, cout, 3, 1, 1, h, w);
  if (cin != cout) {
    b.skip = Conv2dLayer::create(nb, name + ".skip", cin, cout, 1, 1, 0, h, w);
  }
  return b;
}

Value ResBlock::forward(ParamLeaves& ctx, const Value& x, const Value& t_emb,
                        const Value& z_emb) const {
  const int64_t B = x.shape()[0];
  Value h = ag::silu(gn1(ctx, x));
  h = conv1(ctx, h);
  Value tb = time_proj(ctx, ag::silu(t_emb));
  h = ag::add(h, ag::reshape(tb, {B, cout, 1, 1}));
  // Adaptive normalization: scale/shift predicted from the latent embedding.
  Value zs = z_proj(ctx, z_emb);  // [B, 2*cout]
  Value sc = ag::reshape(ag::slice_ch(zs, 0, cout), {B, cout, 1, 1});
  Value sh = ag::reshape(ag::slice_ch(zs, cout, 2 * cout), {B, cout, 1, 1});
  Value hn = ag::group_norm_noaffine(h, groups2);
  h = ag::add(ag::mul(hn, ag::add_scalar(sc, 1.0)), sh);
  h = conv2(ctx, ag::silu(h));
  Value res = skip ? (*skip)(ctx, x) : x;
  return ag::add(h, res);
}

AttentionBlock AttentionBlock::create(NetBuilder& nb, const std::string& name, int64_t c,
                                      int64_t h, int64_t w) {
  AttentionBlock b;
  b.channels = c;
  b.norm = GroupNormLayer::create(nb, name + ".norm", c, h, w);
  auto proj = [&](const char* suffix) {
    return Conv2dLayer::create(nb, name + suffix, c, c, 1, 1, 0, h, w).w;
  };
  b.wq = proj(".q");
  b.wk = proj(".k");
  b.wv = proj(".v");
  b.wo = proj(".o");
  nb.attention(name, c, h, w);
  return b;
}

Value AttentionBlock::forward(ParamLeaves& ctx, const Value& x) const {
  auto conv = [&](const std::string& wname, const Value& in) {
    std::string base = wname.substr(0, wname.size() - 2);  // strip ".w"
    return ag::conv2d(in, ctx.leaf(wname), ctx.leaf(base + ".b"), 1, 0);
  };
  Value hn = norm(ctx, x);
  Value core = attention_core(conv(wq, hn), conv(wk, hn), conv(wv, hn));
  return ag::add(x, conv(wo, core));
}

FreqDownBlock FreqDownBlock::create(NetBuilder& nb, const std::string& name, int64_t cin,
                                    int64_t cout, int64_t t_ch, int64_t z_ch, int64_t h,
                                    int64_t w) {
  FreqDownBlock b;
  b.cout = cout;
  b.block = ResBlock::create(nb, name + ".res", cin, cout, t_ch, z_ch, h, w);
  nb.mark(LayerKind::kDWT, 4 * cout, h / 2, w / 2, name + ".dwt");
  return b;
}

std::pair<Value, Value> FreqDownBlock::forward(ParamLeaves& ctx, const Value& x,
                                               const Value& t_emb, const Value& z_emb) const {
  Value h = block.forward(ctx, x, t_emb, z_emb);
  Value s = ag::haar_dwt(h);
  Value ll = ag::slice_ch(s, 0, cout);
  Value highs = ag::slice_ch(s, cout, 4 * cout);
  return {ll, highs};
}

FreqUpBlock FreqUpBlock::create(NetBuilder& nb, const std::string& name, int64_t c,
                                int64_t skip_ch, int64_t cout, int64_t t_ch, int64_t z_ch,
                                int64_t h, int64_t w) {
  FreqUpBlock b;
  b.c = c;
  b.fuse = Conv2dLayer::create(nb, name + ".fuse", 4 * c, 4 * c, 1, 1, 0, h, w);
  nb.mark(LayerKind::kIWT, c, 2 * h, 2 * w, name + ".iwt");
  b.block = ResBlock::create(nb, name + ".res", c + skip_ch, cout, t_ch, z_ch, 2 * h, 2 * w);
  return b;
}

Value FreqUpBlock::forward(ParamLeaves& ctx, const Value& x, const Value& highs,
                           const Value& skip, const Value& t_emb, const Value& z_emb) const {
  if (highs.shape()[1] != 3 * c || highs.shape()[2] != x.shape()[2]) {
    throw std::invalid_argument("freq_up_block: stored highs do not match the ll path");
  }
  Value fused = fuse(ctx, ag::concat_ch({x, highs}));
  Value up = ag::haar_idwt(fused);
  return block.forward(ctx, ag::concat_ch({up, skip}), t_emb, z_emb);
}

FreqBottleneckBlock FreqBottleneckBlock::create(NetBuilder& nb, const std::string& name,
                                                int64_t c, int64_t t_ch, int64_t z_ch, int64_t h,
                                                int64_t w) {
  FreqBottleneckBlock b;
  b.c = c;
  nb.mark(LayerKind::kDWT, 4 * c, h / 2, w / 2, name + ".dwt");
  b.block = ResBlock::create(nb, name + ".res", c, c, t_ch, z_ch, h / 2, w / 2);
  nb.mark(LayerKind::kIWT, c, h, w, name + ".iwt");
  return b;
}

Value FreqBottleneckBlock::forward(ParamLeaves& ctx, const Value& x, const Value& t_emb,
                                   const Value& z_emb) const {
  Value s = ag::haar_dwt(x);
  Value ll = ag::slice_ch(s, 0, c);
  Value highs = ag::slice_ch(s, c, 4 * c);  // untouched by construction
  Value ll2 = block.forward(ctx, ll, t_emb, z_emb);
  return ag::haar_idwt(ag::concat_ch({ll2, highs}));
}

WaveletDownsampleLayer WaveletDownsampleLayer::create(NetBuilder& nb, const std::string& name,
                                                      int64_t cin, int levels, int64_t cout,
                                                      int64_t out_h, int64_t out_w) {
  if (levels < 1) throw std::invalid_argument("wavelet_downsample_layer: levels must be >= 1");
  WaveletDownsampleLayer l;
  l.levels = levels;
  int64_t c = cin;
  for (int k = 0; k < levels; ++k) {
    c *= 4;
    nb.mark(LayerKind::kDWT, c, out_h << (levels - 1 - k), out_w << (levels - 1 - k),
            name + ".dwt" + std::to_string(k));
  }
  l.proj = Conv2dLayer::create(nb, name + ".proj", c, cout, 1, 1, 0, out_h, out_w);
  return l;
}

Value WaveletDownsampleLayer::forward(ParamLeaves& ctx, const Value& x) const {
  Value d = x;
  for (int k = 0; k < levels; ++k) d = ag::haar_dwt(d);
  return proj(ctx, d);
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

Generator::Generator(GeneratorSpec spec, uint64_t init_seed, bool materialize)
    : spec_(std::move(spec)) {
  spec_.validate();
  RngStream init(init_seed, "init.generator");
  NetBuilder nb{&params_, &init, &plan_, materialize};

  const int M = spec_.levels;
  const int64_t t_ch = spec_.time_embed_channels();
  const int64_t z_ch = spec_.latent_embed_dim;
  const int64_t in_ch = spec_.input_channels();
  const int R = spec_.input_resolution();

  time_mlp0_ = DenseLayer::create(nb, "temb.mlp0", spec_.base_channels, t_ch);
  time_mlp1_ = DenseLayer::create(nb, "temb.mlp1", t_ch, t_ch);
  for (int i = 0; i < spec_.latent_mapping_layers; ++i) {
    const int64_t in = i == 0 ? spec_.latent_dim : z_ch;
    latent_mlp_.push_back(DenseLayer::create(nb, "zmap." + std::to_string(i), in, z_ch));
  }

  nb.mark(LayerKind::kInput, in_ch, R, R, "input");
  conv_in_ = Conv2dLayer::create(nb, "conv_in", in_ch, spec_.channels_at(0), 3, 1, 1, R, R);

  enc_blocks_.resize(M);
  enc_attn_.resize(M);
  for (int i = 0; i < M; ++i) {
    const int res = R >> i;
    const int64_t ch = spec_.channels_at(i);
    for (int j = 0; j < spec_.resblocks_per_scale - 1; ++j) {
      enc_blocks_[i].push_back(ResBlock::create(
          nb, "enc" + std::to_string(i) + ".res" + std::to_string(j), ch, ch, t_ch, z_ch, res,
          res));
    }
    if (spec_.attend_at(res)) {
      enc_attn_[i] = AttentionBlock::create(nb, "enc" + std::to_string(i) + ".attn", ch, res, res);
    }
    if (i < M - 1) {
      nb.mark(LayerKind::kStashPush, ch, res, res, "skip" + std::to_string(i));
      const int64_t ch_next = spec_.channels_at(i + 1);
      down_blocks_.push_back(FreqDownBlock::create(nb, "down" + std::to_string(i), ch, ch_next,
                                                   t_ch, z_ch, res, res));
      nb.mark(LayerKind::kStashPush, 3 * ch_next, res / 2, res / 2,
              "highs" + std::to_string(i));
      freq_residuals_.push_back(WaveletDownsampleLayer::create(
          nb, "fres" + std::to_string(i + 1), in_ch, i + 1, ch_next, res / 2, res / 2));
    }
  }

  const int bottom_res = R >> (M - 1);
  const int64_t bottom_ch = spec_.channels_at(M - 1);
  mid_bottleneck1_ =
      FreqBottleneckBlock::create(nb, "mid.block1", bottom_ch, t_ch, z_ch, bottom_res, bottom_res);
  mid_attn_ = AttentionBlock::create(nb, "mid.attn", bottom_ch, bottom_res, bottom_res);
  mid_bottleneck2_ =
      FreqBottleneckBlock::create(nb, "mid.block2", bottom_ch, t_ch, z_ch, bottom_res, bottom_res);

  up_blocks_.resize(M - 1);
  dec_blocks_.resize(M);
  dec_attn_.resize(M);
  for (int i = M - 2; i >= 0; --i) {
    const int res = R >> i;
    const int64_t ch = spec_.channels_at(i);
    const int64_t ch_next = spec_.channels_at(i + 1);
    nb.mark(LayerKind::kStashPop, 3 * ch_next, res / 2, res / 2, "highs" + std::to_string(i));
    nb.mark(LayerKind::kStashPop, ch, res, res, "skip" + std::to_string(i));
    up_blocks_[i] = FreqUpBlock::create(nb, "up" + std::to_string(i), ch_next, ch, ch, t_ch, z_ch,
                                        res / 2, res / 2);
    for (int j = 0; j < spec_.resblocks_per_scale - 1; ++j) {
      dec_blocks_[i].push_back(ResBlock::create(
          nb, "dec" + std::to_string(i) + ".res" + std::to_string(j), ch, ch, t_ch, z_ch, res,
          res));
    }
    if (spec_.attend_at(res)) {
      dec_attn_[i] = AttentionBlock::create(nb, "dec" + std::to_string(i) + ".attn", ch, res, res);
    }
  }

  gn_out_ = GroupNormLayer::create(nb, "out.norm", spec_.channels_at(0), R, R);
  conv_out_ = Conv2dLayer::create(nb, "out.conv", spec_.channels_at(0), in_ch, 3, 1, 1, R, R,
                                  WeightInit::kZero);
}

Value Generator::forward(ParamLeaves& ctx, const Value& y_t, const Value& z,
                         const std::vector<int>& t) const {
  const int M = spec_.levels;
  const int R = spec_.input_resolution();
  const Shape expect{y_t.shape()[0], spec_.input_channels(), R, R};
  if (y_t.shape() != expect) {
    throw std::invalid_argument("generator: input shape " + shape_str(y_t.shape()) +
                                ", expected " + shape_str(expect));
  }
  const int64_t B = y_t.shape()[0];
  if (z.shape() != Shape{B, spec_.latent_dim}) {
    throw std::invalid_argument("generator: latent shape " + shape_str(z.shape()) +
                                ", expected [B," + std::to_string(spec_.latent_dim) + "]");
  }
  if (static_cast<int64_t>(t.size()) != B) {
    throw std::invalid_argument("generator: need one step index per sample");
  }
  ++forward_calls_;

  ag::Tape& tape = *ctx.tape;
  Value temb = tape.constant(sinusoidal_time_embedding(t, spec_.base_channels));
  temb = time_mlp1_(ctx, ag::silu(time_mlp0_(ctx, temb)));
  Value zemb = z;
  for (const auto& layer : latent_mlp_) zemb = ag::silu(layer(ctx, zemb));

  Value h = conv_in_(ctx, y_t);
  std::vector<Value> skips;
  std::vector<Value> highs_stack;

  for (int i = 0; i < M; ++i) {
    for (const auto& block : enc_blocks_[i]) h = block.forward(ctx, h, temb, zemb);
    if (enc_attn_[i]) h = enc_attn_[i]->forward(ctx, h);
    if (i < M - 1) {
      skips.push_back(h);
      auto [ll, highs] = down_blocks_[static_cast<size_t>(i)].forward(ctx, h, temb, zemb);
      highs_stack.push_back(highs);
      ++stash_pushed_;
      Value res = freq_residuals_[static_cast<size_t>(i)].forward(ctx, y_t);
      h = ag::add(ll, res);
    }
  }

  h = mid_bottleneck1_.forward(ctx, h, temb, zemb);
  h = mid_attn_.forward(ctx, h);
  h = mid_bottleneck2_.forward(ctx, h, temb, zemb);

  for (int i = M - 2; i >= 0; --i) {
    if (highs_stack.empty()) throw std::logic_error("generator: high-subband stash underflow");
    Value highs = highs_stack.back();
    highs_stack.pop_back();
    ++stash_consumed_;
    Value skip = skips.back();
    skips.pop_back();
    h = up_blocks_[static_cast<size_t>(i)].forward(ctx, h, highs, skip, temb, zemb);
    for (const auto& block : dec_blocks_[i]) h = block.forward(ctx, h, temb, zemb);
    if (dec_attn_[i]) h = dec_attn_[i]->forward(ctx, h);
  }

  if (!highs_stack.empty() || !skips.empty()) {
    throw std::logic_error("generator: stashed tensors left unconsumed");
  }
  return conv_out_(ctx, ag::silu(gn_out_(ctx, h)));
}

NDTensor Generator::forward_tensor(const NDTensor& y_t, const NDTensor& z,
                                   const std::vector<int>& t,
                                   const ParamStore* override_params) const {
  ag::Tape tape;
  ParamLeaves ctx(tape, override_params ? *override_params : params_, false);
  Value out = forward(ctx, tape.constant(y_t), tape.constant(z), t);
  return out.val();
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

Discriminator::Discriminator(DiscriminatorSpec spec, uint64_t init_seed, bool materialize)
    : spec_(std::move(spec)) {
  spec_.validate();
  RngStream init(init_seed, "init.discriminator");
  NetBuilder nb{&params_, &init, &plan_, materialize};

  const int M = spec_.levels;
  const int64_t t_ch = spec_.time_embed_channels();
  const int R = spec_.input_resolution();

  time_mlp0_ = DenseLayer::create(nb, "temb.mlp0", spec_.base_channels, t_ch);
  time_mlp1_ = DenseLayer::create(nb, "temb.mlp1", t_ch, t_ch);

  nb.mark(LayerKind::kInput, spec_.input_channels(), R, R, "input");
  conv_in_ = Conv2dLayer::create(nb, "conv_in", spec_.input_channels(), spec_.channels_at(0), 3,
                                 1, 1, R, R);
  for (int i = 0; i < M; ++i) {
    const int res = R >> i;
    const int64_t ch = spec_.channels_at(i);
    DBlock blk;
    const std::string name = "blk" + std::to_string(i);
    blk.conv1 = Conv2dLayer::create(nb, name + ".conv1", ch, ch, 3, 1, 1, res, res);
    blk.time_proj = DenseLayer::create(nb, name + ".temb", t_ch, ch);
    blk.conv2 = Conv2dLayer::create(nb, name + ".conv2", ch, ch, 3, 1, 1, res, res);
    blocks_.push_back(blk);
    if (i < M - 1) {
      downs_.push_back(Conv2dLayer::create(nb, "down" + std::to_string(i), ch,
                                           spec_.channels_at(i + 1), 3, 2, 1, res / 2, res / 2));
    }
  }
  head_ = DenseLayer::create(nb, "head", spec_.channels_at(M - 1), 1);
}

Value Discriminator::forward(ParamLeaves& ctx, const Value& y_prev, const Value& y_t,
                             const std::vector<int>& t) const {
  if (y_prev.shape() != y_t.shape()) {
    throw std::invalid_argument("discriminator: pair shapes differ, " +
                                shape_str(y_prev.shape()) + " vs " + shape_str(y_t.shape()));
  }
  const int64_t B = y_prev.shape()[0];
  if (static_cast<int64_t>(t.size()) != B) {
    throw std::invalid_argument("discriminator: need one step index per sample");
  }
  ag::Tape& tape = *ctx.tape;
  Value temb = tape.constant(sinusoidal_time_embedding(t, spec_.base_channels));
  temb = time_mlp1_(ctx, ag::silu(time_mlp0_(ctx, temb)));

  Value h = conv_in_(ctx, ag::concat_ch({y_prev, y_t}));
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const DBlock& blk = blocks_[i];
    const int64_t ch = h.shape()[1];
    Value tb = blk.time_proj(ctx, ag::silu(temb));
    Value g = ag::conv2d(h, ctx.leaf(blk.conv1.w), ctx.leaf(blk.conv1.b), 1, 1);
    g = ag::leaky_relu(ag::add(g, ag::reshape(tb, {B, ch, 1, 1})), 0.2);
    g = blk.conv2(ctx, g);
    h = ag::leaky_relu(ag::add(g, h), 0.2);
    if (i + 1 < blocks_.size()) h = ag::leaky_relu(downs_[i](ctx, h), 0.2);
  }
  return head_(ctx, ag::mean_pool_hw(h));
}

}  // namespace wavediff
