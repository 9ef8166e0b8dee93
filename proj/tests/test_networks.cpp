#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "wavediff/accounting.hpp"
#include "wavediff/gradcheck.hpp"
#include "wavediff/networks.hpp"
#include "wavediff/rng.hpp"
#include "wavediff/wavelet.hpp"

using namespace wavediff;
using ag::Tape;
using ag::Value;

namespace {

GeneratorSpec tiny_spec() {
  GeneratorSpec s;
  s.levels = 2;
  s.base_channels = 8;
  s.channel_mult = {1, 2};
  s.attention_resolutions = {4};
  s.latent_dim = 8;
  s.latent_embed_dim = 16;
  s.latent_mapping_layers = 2;
  s.image_channels = 1;
  s.image_resolution = 16;  // 8x8 wavelet input
  return s;
}

void zero_param(ParamStore& store, const std::string& name) {
  NDTensor& t = store.at(name);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = 0.0;
}

// 1x1 conv weight [cout, cin, 1, 1] selecting input channel c for output c.
void set_identity_1x1(ParamStore& store, const std::string& name) {
  NDTensor& w = store.at(name);
  const int64_t cout = w.dim(0), cin = w.dim(1);
  for (int64_t i = 0; i < w.size(); ++i) w[i] = 0.0;
  for (int64_t c = 0; c < std::min(cout, cin); ++c) w[c * cin + c] = 1.0;
}

}  // namespace

TEST_CASE("generator: output shape equals input shape, forward is deterministic") {
  GeneratorSpec spec = tiny_spec();
  Generator gen(spec, 42);
  RngStream rng(1, "gen");
  NDTensor y = rng.normal_tensor({2, 4, 8, 8});
  NDTensor z = rng.normal_tensor({2, 8});
  NDTensor out1 = gen.forward_tensor(y, z, {1, 2});
  NDTensor out2 = gen.forward_tensor(y, z, {1, 2});
  CHECK(out1.shape() == y.shape());
  for (int64_t i = 0; i < out1.size(); ++i) CHECK(out1[i] == out2[i]);
  CHECK(gen.forward_calls() == 2);

  // zero-initialized output conv: the first forward of a fresh model is 0
  CHECK(max_abs(out1) == 0.0);
}

TEST_CASE("generator: shape violations throw") {
  Generator gen(tiny_spec(), 0);
  RngStream rng(2, "gen-shape");
  CHECK_THROWS_AS(gen.forward_tensor(rng.normal_tensor({1, 4, 6, 6}), rng.normal_tensor({1, 8}),
                                     {1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(gen.forward_tensor(rng.normal_tensor({1, 4, 8, 8}), rng.normal_tensor({1, 5}),
                                     {1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(gen.forward_tensor(rng.normal_tensor({1, 4, 8, 8}), rng.normal_tensor({1, 8}),
                                     {1, 2}),
                  std::invalid_argument);
}

TEST_CASE("generator: parameter count matches the accounting plan exactly") {
  for (const GeneratorSpec& spec : {tiny_spec(), GeneratorSpec{}}) {
    Generator gen(spec, 7);
    CostReport report = count_generator(spec);
    CHECK(gen.params().total_size() == report.params);
  }
  DiscriminatorSpec dspec = DiscriminatorSpec::mirror(tiny_spec());
  Discriminator disc(dspec, 7);
  CHECK(disc.params().total_size() == count_discriminator(dspec).params);
}

TEST_CASE("generator: every stashed high tensor is consumed exactly once") {
  GeneratorSpec spec = tiny_spec();
  Generator gen(spec, 3);
  RngStream rng(3, "stash");
  gen.forward_tensor(rng.normal_tensor({1, 4, 8, 8}), rng.normal_tensor({1, 8}), {2});
  CHECK(gen.stash_pushed() == spec.levels - 1);
  CHECK(gen.stash_consumed() == gen.stash_pushed());
}

TEST_CASE("freq_down_block: halved extents, identity ResNet annihilates highs") {
  ParamStore store;
  RngStream init(5, "init");
  std::vector<LayerDesc> plan;
  NetBuilder nb{&store, &init, &plan, true};
  auto block = FreqDownBlock::create(nb, "down", 4, 4, 8, 8, 8, 8);
  zero_param(store, "down.res.conv2.w");  // block output = input (identity skip)

  Tape tape;
  ParamLeaves ctx(tape, store, false);
  Value temb = tape.constant(NDTensor::zeros({1, 8}));
  Value zemb = tape.constant(NDTensor::zeros({1, 8}));
  Value x = tape.constant(NDTensor::full({1, 4, 8, 8}, 1.3));
  auto [ll, highs] = block.forward(ctx, x, temb, zemb);
  CHECK(ll.shape() == Shape{1, 4, 4, 4});
  CHECK(highs.shape() == Shape{1, 12, 4, 4});
  CHECK(max_abs(highs.val()) == 0.0);  // Haar annihilation of constants
  for (int64_t i = 0; i < ll.val().size(); ++i) {
    CHECK(ll.val()[i] == doctest::Approx(2.0 * 1.3).epsilon(1e-14));
  }
}

TEST_CASE("freq_up_block: doubled extents; identity config reconstructs exactly") {
  ParamStore store;
  RngStream init(6, "init");
  std::vector<LayerDesc> plan;
  NetBuilder nb{&store, &init, &plan, true};
  const int64_t c = 4;
  auto down = FreqDownBlock::create(nb, "down", c, c, 8, 8, 8, 8);
  auto up = FreqUpBlock::create(nb, "up", c, c, c, 8, 8, 4, 4);
  zero_param(store, "down.res.conv2.w");
  zero_param(store, "up.res.conv2.w");
  set_identity_1x1(store, "up.fuse.w");
  set_identity_1x1(store, "up.res.skip.w");  // [I | 0]: pass the idwt path through

  RngStream rng(7, "ud");
  NDTensor f = rng.normal_tensor({1, c, 8, 8});
  Tape tape;
  ParamLeaves ctx(tape, store, false);
  Value temb = tape.constant(NDTensor::zeros({1, 8}));
  Value zemb = tape.constant(NDTensor::zeros({1, 8}));
  Value fv = tape.constant(f);
  auto [ll, highs] = down.forward(ctx, fv, temb, zemb);

  // full round trip: up(down(F)) == F when fusion and skip are identity
  Value rec = up.forward(ctx, ll, highs, fv, temb, zemb);
  CHECK(rec.shape() == Shape{1, c, 8, 8});
  CHECK(max_abs_diff(rec.val(), f) < 1e-12);

  // ll-only route with zeroed highs matches the ll-only reconstruction oracle
  Value zero_highs = tape.constant(NDTensor::zeros({1, 3 * c, 4, 4}));
  Value rec_ll = up.forward(ctx, ll, zero_highs, fv, temb, zemb);
  SubbandSet s;
  s.ll = ll.val();
  s.lh = NDTensor::zeros({1, c, 4, 4});
  s.hl = NDTensor::zeros({1, c, 4, 4});
  s.hh = NDTensor::zeros({1, c, 4, 4});
  CHECK(max_abs_diff(rec_ll.val(), idwt(s)) < 1e-12);

  // missing/mismatched stash entry
  Value bad_highs = tape.constant(NDTensor::zeros({1, 3 * c, 2, 2}));
  CHECK_THROWS_AS(up.forward(ctx, ll, bad_highs, fv, temb, zemb), std::invalid_argument);
}

TEST_CASE("freq_bottleneck_block: identity config is exact identity") {
  ParamStore store;
  RngStream init(8, "init");
  std::vector<LayerDesc> plan;
  NetBuilder nb{&store, &init, &plan, true};
  auto block = FreqBottleneckBlock::create(nb, "mid", 4, 8, 8, 8, 8);
  zero_param(store, "mid.res.conv2.w");

  RngStream rng(9, "bott");
  NDTensor x = rng.normal_tensor({2, 4, 8, 8});
  Tape tape;
  ParamLeaves ctx(tape, store, false);
  Value temb = tape.constant(NDTensor::zeros({2, 8}));
  Value zemb = tape.constant(NDTensor::zeros({2, 8}));
  Value out = block.forward(ctx, tape.constant(x), temb, zemb);
  CHECK(max_abs_diff(out.val(), x) < 1e-12);
}

TEST_CASE("freq_bottleneck_block preserves high subbands exactly under random weights") {
  ParamStore store;
  RngStream init(10, "init");
  std::vector<LayerDesc> plan;
  NetBuilder nb{&store, &init, &plan, true};
  auto block = FreqBottleneckBlock::create(nb, "mid", 6, 12, 10, 8, 8);

  RngStream rng(11, "bott-high");
  NDTensor x = rng.normal_tensor({2, 6, 8, 8});
  Tape tape;
  ParamLeaves ctx(tape, store, false);
  Value temb = tape.constant(rng.normal_tensor({2, 12}));
  Value zemb = tape.constant(rng.normal_tensor({2, 10}));
  Value out = block.forward(ctx, tape.constant(x), temb, zemb);

  SubbandSet sin = dwt(x);
  SubbandSet sout = dwt(out.val());
  CHECK(max_abs_diff(sout.lh, sin.lh) < 1e-10);
  CHECK(max_abs_diff(sout.hl, sin.hl) < 1e-10);
  CHECK(max_abs_diff(sout.hh, sin.hh) < 1e-10);
  // and the low band does change (the block is not a no-op)
  CHECK(max_abs_diff(sout.ll, sin.ll) > 1e-3);
}

TEST_CASE("discriminator: one finite logit per sample at init") {
  DiscriminatorSpec spec = DiscriminatorSpec::mirror(tiny_spec());
  Discriminator disc(spec, 13);
  RngStream rng(14, "disc");
  const int64_t B = 5;
  Tape tape;
  ParamLeaves ctx(tape, disc.params(), false);
  Value y_prev = tape.constant(rng.normal_tensor({B, 4, 8, 8}));
  Value y_t = tape.constant(rng.normal_tensor({B, 4, 8, 8}));
  Value logits = disc.forward(ctx, y_prev, y_t, {1, 2, 3, 4, 1});
  CHECK(logits.shape() == Shape{B, 1});
  CHECK(all_finite(logits.val()));

  Value bad = tape.constant(rng.normal_tensor({B, 4, 4, 4}));
  CHECK_THROWS_AS(disc.forward(ctx, y_prev, bad, {1, 2, 3, 4, 1}), std::invalid_argument);
}

TEST_CASE("block-level gradcheck at 1e-4 (sampled coordinates)") {
  ParamStore store;
  RngStream init(15, "init");
  std::vector<LayerDesc> plan;
  NetBuilder nb{&store, &init, &plan, true};
  auto block = ResBlock::create(nb, "rb", 3, 5, 6, 4, 4, 4);

  RngStream rng(16, "rb-grad");
  NDTensor x = rng.normal_tensor({2, 3, 4, 4});
  NDTensor temb = rng.normal_tensor({2, 6});
  NDTensor zemb = rng.normal_tensor({2, 4});

  std::vector<std::pair<std::string, NDTensor>> params{{"x", x}};
  for (const auto& name : store.names()) params.emplace_back(name, store.at(name));

  auto f = [&](Tape& tape, const std::vector<Value>& leaves) {
    ParamLeaves ctx(tape, store, true);
    for (size_t i = 1; i < params.size(); ++i) ctx.set(params[i].first, leaves[i]);
    Value out = block.forward(ctx, leaves[0], tape.constant(temb), tape.constant(zemb));
    return ag::mean_all(ag::tanh_op(out));
  };
  GradCheckOptions opt;
  opt.max_coords = 6;
  GradCheckReport rep = gradcheck(f, params, opt);
  for (const auto& e : rep.entries) {
    INFO(e.name, " max_rel_err=", e.max_rel_err);
    CHECK(e.pass);
  }
}
