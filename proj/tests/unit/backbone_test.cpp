#include <gtest/gtest.h>

#include "memdpc/backbone/config.hpp"
#include "memdpc/backbone/conv_gru.hpp"
#include "memdpc/backbone/encoder.hpp"
#include "memdpc/core/error.hpp"
#include "memdpc/core/ops.hpp"
#include "support/gradcheck.hpp"

namespace memdpc::backbone {
namespace {

using memdpc::testing::check_gradients;

// Independent stride arithmetic: stem, pool, and each stage's first unit.
std::array<int, 3> shape_oracle(const BackboneConfig& c) {
  auto out = [](int n, int k, int s) { return (n + 2 * (k / 2) - k) / s + 1; };
  int hw = out(c.input_size, c.stem_kernel, c.stem_stride);
  if (c.stem_pool) hw = out(hw, 3, 2);
  int t = c.block_len;
  for (const auto& st : c.stages) {
    hw = out(hw, 3, st.spatial_stride);
    t = out(t, st.temporal_kernel, st.temporal_stride);
  }
  (void)t;  // the final temporal pool collapses whatever remains
  return {c.feature_channels(), hw, hw};
}

Tensor random_block(Rng& rng, int L, int S) {
  Tensor b({L, S, S, 3});
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(0.0, 1.0);
  return b;
}

TEST(Encoder, R18At128GivesFourByFour) {
  Rng rng(1);
  Encoder enc(BackboneConfig::make(EncoderDepth::R18, 128), rng);
  BlockFeature f = enc.encode_block(random_block(rng, 5, 128));
  EXPECT_EQ(f.values.shape(), (Shape{256, 4, 4}));
  EXPECT_TRUE(f.values.all_finite());
}

TEST(Encoder, R18At64GivesTwoByTwo) {
  Rng rng(2);
  Encoder enc(BackboneConfig::make(EncoderDepth::R18, 64), rng);
  BlockFeature f = enc.encode_block(random_block(rng, 5, 64));
  EXPECT_EQ(f.values.shape(), (Shape{256, 2, 2}));
}

TEST(Encoder, StageTables) {
  auto r18 = BackboneConfig::make(EncoderDepth::R18);
  auto r34 = BackboneConfig::make(EncoderDepth::R34);
  std::vector<int> d18, d34, tk;
  for (const auto& s : r18.stages) d18.push_back(s.depth), tk.push_back(s.temporal_kernel);
  for (const auto& s : r34.stages) d34.push_back(s.depth);
  EXPECT_EQ(d18, (std::vector<int>{2, 2, 2, 2}));
  EXPECT_EQ(d34, (std::vector<int>{3, 4, 6, 3}));
  EXPECT_EQ(tk, (std::vector<int>{1, 1, 3, 3}));
  EXPECT_EQ(r18.feature_channels(), 256);
  EXPECT_EQ(BackboneConfig::make(EncoderDepth::Tiny).feature_channels(), 16);
}

TEST(Encoder, ShapeMatchesOracle) {
  Rng rng(3);
  for (int size : {24, 32, 40, 48}) {
    for (int L : {3, 5, 7}) {
      auto cfg = BackboneConfig::make(EncoderDepth::Tiny, size, L);
      Encoder enc(cfg, rng);
      auto want = shape_oracle(cfg);
      auto got = enc.encode_block(random_block(rng, L, size)).values.shape();
      EXPECT_EQ(got, (Shape{want[0], want[1], want[2]})) << size << " " << L;
      EXPECT_EQ(cfg.feature_size(), want[1]);
    }
  }
  for (int size : {32, 64, 96}) {
    auto cfg = BackboneConfig::make(EncoderDepth::R34, size);
    EXPECT_EQ(cfg.feature_size(), shape_oracle(cfg)[1]);
  }
}

TEST(Encoder, ZeroInputFinite) {
  Rng rng(4);
  auto cfg = BackboneConfig::make(EncoderDepth::Tiny);
  for (bool bn : {true, false}) {
    cfg.batch_norm = bn;
    Encoder enc(cfg, rng);
    auto f = enc.encode_block(Tensor({5, 32, 32, 3}));
    EXPECT_TRUE(f.values.all_finite());
  }
}

TEST(Encoder, ParametersFiniteAndDeterministic) {
  Rng a(5), b(5);
  auto cfg = BackboneConfig::make(EncoderDepth::Tiny);
  Encoder ea(cfg, a), eb(cfg, b);
  ParamList pa, pb;
  ea.parameters("enc.", pa);
  eb.parameters("enc.", pb);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(pa[i].var->value.all_finite());
    EXPECT_EQ(pa[i].var->value, pb[i].var->value);
  }
  Rng r(6);
  Tensor x = random_block(r, 5, 32);
  EXPECT_EQ(ea.encode_block(x).values, ea.encode_block(x).values);
}

TEST(Encoder, ShapeMismatch) {
  Rng rng(7);
  Encoder enc(BackboneConfig::make(EncoderDepth::Tiny), rng);
  for (Shape bad : {Shape{4, 32, 32, 3}, Shape{5, 31, 32, 3}, Shape{5, 32, 32, 2}}) {
    try {
      enc.encode_block(Tensor(bad));
      FAIL() << shape_str(bad);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
    }
  }
  EXPECT_THROW(enc.forward(ag::constant(Tensor({2, 3, 5, 32, 16})), false), Error);
}

TEST(Encoder, ConfigJsonRoundTrip) {
  for (auto d : {EncoderDepth::R18, EncoderDepth::R34, EncoderDepth::Tiny}) {
    auto c = BackboneConfig::make(d);
    c.batch_norm = d != EncoderDepth::Tiny;
    EXPECT_EQ(BackboneConfig::from_json(c.to_json()), c);
  }
  EXPECT_THROW(BackboneConfig::from_json(nlohmann::json{{"depth", 3}}), Error);
  EXPECT_THROW(parse_depth("R50"), Error);
}

ContextFeature random_feature(Rng& rng, int C, int H) {
  return ContextFeature{rng.normal_tensor({C, H, H}, 1.0)};
}

TEST(ConvGru, R18ShapeKept) {
  Rng rng(8);
  ConvGru gru(256, rng);
  BlockFeature z{rng.normal_tensor({256, 4, 4}, 1.0)};
  auto c = aggregate_step(gru, z, nullptr);
  EXPECT_EQ(c.values.shape(), (Shape{256, 4, 4}));
}

TEST(ConvGru, SpatiallyConstantStaysConstant) {
  Rng rng(9);
  ConvGru gru(6, rng);
  Tensor z({6, 3, 3}), h({6, 3, 3});
  for (int c = 0; c < 6; ++c) {
    const double zv = rng.normal(0, 1), hv = rng.normal(0, 1);
    for (int p = 0; p < 9; ++p) z[c * 9 + p] = zv, h[c * 9 + p] = hv;
  }
  ContextFeature hidden{h};
  auto out = aggregate_step(gru, BlockFeature{z}, &hidden);
  for (int c = 0; c < 6; ++c)
    for (int p = 1; p < 9; ++p) EXPECT_NEAR(out.values[c * 9 + p], out.values[c * 9], 1e-14);
}

TEST(ConvGru, StepwiseEqualsSequence) {
  Rng rng(10);
  ConvGru gru(5, rng);
  std::vector<BlockFeature> zs;
  for (int i = 0; i < 5; ++i) zs.push_back(BlockFeature{rng.normal_tensor({5, 2, 2}, 1.0)});
  ContextFeature h = aggregate_step(gru, zs[0], nullptr);
  EXPECT_EQ(aggregate_sequence(gru, {zs[0]}).values, h.values);
  for (int i = 1; i < 5; ++i) h = aggregate_step(gru, zs[i], &h);
  EXPECT_LT(max_abs_diff(aggregate_sequence(gru, zs).values, h.values), 1e-14);
}

// Gate equations written out per position, independent of the graph ops.
Tensor gru_reference(const ConvGru& gru, const Tensor& z, const Tensor& h) {
  ParamList ps;
  gru.parameters("", ps);
  auto get = [&](const std::string& n) -> const Tensor& {
    for (const auto& p : ps)
      if (p.name == n) return p.var->value;
    throw std::runtime_error(n);
  };
  const Tensor &Wr = get("reset.weight"), &Wu = get("update.weight"), &Wo = get("out.weight");
  const Tensor &br = get("reset.bias"), &bu = get("update.bias"), &bo = get("out.bias");
  const int C = static_cast<int>(z.shape()[0]);
  const int P = static_cast<int>(z.size() / C);
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  Tensor out(z.shape());
  for (int p = 0; p < P; ++p) {
    std::vector<double> r(C), u(C);
    for (int o = 0; o < C; ++o) {
      double ar = br[o], au = bu[o];
      for (int i = 0; i < C; ++i) {
        ar += Wr[o * 2 * C + i] * z[i * P + p] + Wr[o * 2 * C + C + i] * h[i * P + p];
        au += Wu[o * 2 * C + i] * z[i * P + p] + Wu[o * 2 * C + C + i] * h[i * P + p];
      }
      r[o] = sig(ar);
      u[o] = sig(au);
    }
    for (int o = 0; o < C; ++o) {
      double an = bo[o];
      for (int i = 0; i < C; ++i)
        an += Wo[o * 2 * C + i] * z[i * P + p] + Wo[o * 2 * C + C + i] * r[i] * h[i * P + p];
      const double n = std::tanh(an);
      out[o * P + p] = (1 - u[o]) * h[o * P + p] + u[o] * n;
    }
  }
  return out;
}

TEST(ConvGru, MatchesGateEquations) {
  Rng rng(11);
  ConvGru gru(4, rng);
  Tensor z = rng.normal_tensor({4, 2, 3}, 1.0), h = rng.normal_tensor({4, 2, 3}, 1.0);
  ContextFeature hidden{h};
  auto out = aggregate_step(gru, BlockFeature{z}, &hidden);
  EXPECT_LT(max_abs_diff(out.values, gru_reference(gru, z, h)), 1e-12);
  auto zero = aggregate_step(gru, BlockFeature{z}, nullptr);
  EXPECT_LT(max_abs_diff(zero.values, gru_reference(gru, z, Tensor(z.shape()))), 1e-12);
}

TEST(ConvGru, OrderMatters) {
  Rng rng(12);
  ConvGru gru(4, rng);
  std::vector<BlockFeature> zs;
  for (int i = 0; i < 4; ++i) zs.push_back(BlockFeature{rng.normal_tensor({4, 2, 2}, 1.0)});
  auto fwd = aggregate_sequence(gru, zs);
  std::swap(zs[0], zs[2]);
  EXPECT_GT(max_abs_diff(fwd.values, aggregate_sequence(gru, zs).values), 1e-6);
}

TEST(ConvGru, PositionLocality) {
  Rng rng(13);
  ConvGru gru(4, rng);
  Tensor z = rng.normal_tensor({4, 3, 3}, 1.0), h = rng.normal_tensor({4, 3, 3}, 1.0);
  ContextFeature hidden{h};
  auto base = aggregate_step(gru, BlockFeature{z}, &hidden);
  Tensor z2 = z;
  for (int c = 0; c < 4; ++c) z2[c * 9 + 4] += 0.7;
  auto pert = aggregate_step(gru, BlockFeature{z2}, &hidden);
  for (int c = 0; c < 4; ++c)
    for (int p = 0; p < 9; ++p) {
      if (p == 4) {
        EXPECT_NE(pert.values[c * 9 + p], base.values[c * 9 + p]);
      } else {
        EXPECT_EQ(pert.values[c * 9 + p], base.values[c * 9 + p]);
      }
    }
}

TEST(ConvGru, Errors) {
  Rng rng(14);
  ConvGru gru(4, rng);
  try {
    aggregate_sequence(gru, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptySequence);
  }
  ContextFeature h{Tensor({4, 2, 2})};
  try {
    aggregate_step(gru, BlockFeature{Tensor({4, 3, 3})}, &h);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_THROW(aggregate_step(gru, BlockFeature{Tensor({5, 2, 2})}, nullptr), Error);
}

TEST(BackboneGradients, EncoderAndAggregator) {
  Rng rng(15);
  auto cfg = BackboneConfig::make(EncoderDepth::Tiny);
  cfg.batch_norm = false;
  Encoder enc(cfg, rng);
  ConvGru gru(cfg.feature_channels(), rng);
  ParamList params;
  enc.parameters("enc.", params);
  gru.parameters("agg.", params);
  const int N = 2, B = 3;  // B blocks per sequence
  Tensor x({N * B, 3, 5, 32, 32});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 1.0);
  Tensor probe = rng.normal_tensor({N, 16, 4, 4}, 1.0);
  auto objective = [&] {
    ag::Var z = enc.forward(ag::constant(x), true);
    z = ag::reshape(z, {N, B, 16, 4, 4});
    std::vector<ag::Var> seq;
    for (int b = 0; b < B; ++b)
      seq.push_back(ag::reshape(ag::index_select(z, 1, {b}), {N, 16, 4, 4}));
    return ag::weighted_sum(gru.run(seq), probe);
  };
  auto res = check_gradients(params, objective, 1e-3, 6);
  EXPECT_LE(res.max_rel_error, 1e-4) << res.worst << " over " << res.checked;
  EXPECT_GE(res.checked, static_cast<int>(params.size()) * 4) << res.skipped_kinks << " kinks";
}

}  // namespace
}  // namespace memdpc::backbone
