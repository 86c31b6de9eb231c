#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "memdpc/core/error.hpp"
#include "memdpc/core/ops.hpp"
#include "memdpc/loss/contrastive.hpp"
#include "support/gradcheck.hpp"

namespace memdpc::loss {
namespace {

TEST(DenseLoss, EqualScoresGiveLogN) {
  // zero predictions score 0 against every target
  Rng rng(1);
  Tensor pred({2, 2, 3, 2, 2}), target = rng.normal_tensor({2, 2, 3, 2, 2}, 1.0);
  auto rep = dense_contrastive_loss(pred, target);
  EXPECT_EQ(rep.num_candidates, 16);
  EXPECT_NEAR(rep.value, std::log(16.0), 1e-12);
  EXPECT_EQ(rep.top1_accuracy, 0.0);
  EXPECT_NEAR(contrastive_loss_oracle(pred, target), std::log(16.0), 1e-12);
}

TEST(DenseLoss, DominantDiagonal) {
  // one-hot rows at distinct channels, scaled up: diagonal wins by a margin
  Tensor pred({1, 1, 8, 2, 2}), target({1, 1, 8, 2, 2});
  for (int r = 0; r < 4; ++r) {
    pred[r * 4 + r] = 1000.0;
    target[r * 4 + r] = 1.0;
  }
  auto rep = dense_contrastive_loss(pred, target);
  EXPECT_LT(rep.value, 1e-12);
  EXPECT_EQ(rep.top1_accuracy, 1.0);
}

TEST(DenseLoss, SmallCaseMatchesOracle) {
  Rng rng(2);
  Tensor pred = rng.normal_tensor({2, 2, 3, 2, 2}, 1.0), target = rng.normal_tensor({2, 2, 3, 2, 2}, 1.0);
  for (bool norm : {false, true})
    EXPECT_NEAR(dense_contrastive_loss(pred, target, norm).value,
                contrastive_loss_oracle(pred, target, norm), 1e-10);
}

TEST(DenseLoss, OracleEquivalenceSweep) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const int B = static_cast<int>(rng.integer(1, 4)), S = static_cast<int>(rng.integer(1, 3));
    const int H = static_cast<int>(rng.integer(1, 4)), W = static_cast<int>(rng.integer(1, 4));
    const int C = static_cast<int>(rng.integer(1, 8));
    if (B * S * H * W < 2) continue;
    const double scale = rng.uniform(0.1, 5.0);
    Tensor p = rng.normal_tensor({B, S, C, H, W}, scale), t = rng.normal_tensor({B, S, C, H, W}, scale);
    const bool norm = seed % 2 == 1;
    EXPECT_NEAR(dense_contrastive_loss(p, t, norm).value, contrastive_loss_oracle(p, t, norm), 1e-10)
        << "seed " << seed;
  }
}

TEST(DenseLoss, DegenerateAndNonFinite) {
  Tensor one({1, 1, 3, 1, 1}, 1.0);
  try {
    dense_contrastive_loss(one, one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateBatch);
  }
  EXPECT_THROW(contrastive_loss_oracle(one, one), Error);
  EXPECT_THROW(contrastive_loss_oracle(Tensor({1, 1, 2, 16, 17}), Tensor({1, 1, 2, 16, 17})), Error);
  EXPECT_THROW(dense_contrastive_loss(Tensor({1, 2, 3, 1, 1}), Tensor({1, 2, 4, 1, 1})), Error);
  Tensor bad({1, 2, 2, 1, 1}, 1.0);
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    dense_contrastive_loss(bad, Tensor({1, 2, 2, 1, 1}, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteInput);
  }
}

// Gather flattened rows (b, s, h, w order) of a [B][S][C][H][W] tensor.
Tensor permute_candidates(const Tensor& x, const std::vector<int>& perm) {
  const auto& s = x.shape();
  const int B = s[0], S = s[1], C = s[2], P = s[3] * s[4];
  Tensor out(s);
  auto offset = [&](int row, int c) {
    const int bs = row / P, pos = row % P;
    return (bs * C + c) * P + pos;
  };
  for (int r = 0; r < B * S * P; ++r)
    for (int c = 0; c < C; ++c) out[offset(r, c)] = x[offset(perm[r], c)];
  return out;
}

TEST(DenseLoss, CandidatePermutationInvariant) {
  Rng rng(3);
  Tensor p = rng.normal_tensor({2, 3, 4, 2, 2}, 1.0), t = rng.normal_tensor({2, 3, 4, 2, 2}, 1.0);
  std::vector<int> perm(24);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    EXPECT_NEAR(dense_contrastive_loss(permute_candidates(p, perm), permute_candidates(t, perm)).value,
                dense_contrastive_loss(p, t).value, 1e-10);
  }
}

TEST(DenseLoss, RaisingOnePositiveLowersLoss) {
  Rng rng(4);
  Tensor p = rng.normal_tensor({2, 1, 3, 2, 2}, 1.0), t = rng.normal_tensor({2, 1, 3, 2, 2}, 1.0);
  // An extra channel that only the anchor's target carries: growing the
  // anchor's prediction along it raises its diagonal score alone.
  Tensor p2({2, 1, 4, 2, 2}), t2({2, 1, 4, 2, 2});
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int pos = 0; pos < 4; ++pos) {
        p2[(b * 4 + c) * 4 + pos] = p[(b * 3 + c) * 4 + pos];
        t2[(b * 4 + c) * 4 + pos] = t[(b * 3 + c) * 4 + pos];
      }
  const int anchor_b = 1, anchor_pos = 1;
  t2[(anchor_b * 4 + 3) * 4 + anchor_pos] = 1.0;
  double prev = dense_contrastive_loss(p2, t2).value;
  for (int k = 1; k <= 5; ++k) {
    p2[(anchor_b * 4 + 3) * 4 + anchor_pos] = 0.5 * k;
    const double now = dense_contrastive_loss(p2, t2).value;
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(DenseLoss, RandomTop1NearChance) {
  const int trials = 60, n = 16;
  double hits = 0;
  for (int t = 0; t < trials; ++t) {
    Rng rng(100 + t);
    auto rep = dense_contrastive_loss(rng.normal_tensor({4, 1, 8, 2, 2}, 1.0),
                                      rng.normal_tensor({4, 1, 8, 2, 2}, 1.0));
    EXPECT_GE(rep.top1_accuracy, 0.0);
    EXPECT_LE(rep.top1_accuracy, 1.0);
    hits += rep.top1_accuracy * n;
  }
  const double total = trials * n, p = 1.0 / n;
  const double sigma = std::sqrt(total * p * (1 - p));
  EXPECT_NEAR(hits, total * p, 3 * sigma);
}

TEST(DenseLoss, BoundedByLogNForBoundedScores) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    auto rep = dense_contrastive_loss(rng.normal_tensor({2, 2, 5, 2, 2}, 1.0),
                                      rng.normal_tensor({2, 2, 5, 2, 2}, 1.0), true);
    EXPECT_GE(rep.value, 0.0);
    EXPECT_LE(rep.value, std::log(16.0) + 2.0);  // cosine scores in [-1, 1]
  }
}

TEST(DenseLoss, GradientWrtPredicted) {
  Rng rng(6);
  auto a = ag::parameter(rng.normal_tensor({3, 4, 2, 2}, 1.0));
  auto b = ag::parameter(rng.normal_tensor({3, 4, 2, 2}, 1.0));
  auto ta = ag::constant(rng.normal_tensor({3, 4, 2, 2}, 1.0));
  auto tb = ag::constant(rng.normal_tensor({3, 4, 2, 2}, 1.0));
  for (bool norm : {false, true}) {
    auto res = memdpc::testing::check_gradients({{"a", a}, {"b", b}}, [&] {
      return dense_contrastive_loss(DensePairBatch{{a, b}, {ta, tb}}, norm).loss;
    }, 1e-3, 48);
    EXPECT_LE(res.max_rel_error, 1e-4) << res.worst;
  }
}

TEST(Combine, Mean) {
  EXPECT_EQ(combine_bidirectional(2.0, 4.0), 3.0);
  EXPECT_EQ(combine_bidirectional(1.25, 1.25), 1.25);
  EXPECT_EQ(combine_bidirectional(0.3, 7.0), combine_bidirectional(7.0, 0.3));
  auto v = combine_bidirectional(ag::constant(Tensor::scalar(2.0)), ag::constant(Tensor::scalar(4.0)));
  EXPECT_EQ(v->value.item(), 3.0);
}

}  // namespace
}  // namespace memdpc::loss
