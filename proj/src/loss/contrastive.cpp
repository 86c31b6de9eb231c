#include "memdpc/loss/contrastive.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "memdpc/core/error.hpp"
#include "memdpc/core/ops.hpp"

namespace memdpc::loss {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapM = Eigen::Map<const MatRM>;
using MapM = Eigen::Map<MatRM>;

// [B][C][H][W] per step -> rows [B*S*H*W][C] in (b, s, h, w) order.
ag::Var flatten_steps(const std::vector<ag::Var>& steps) {
  const Shape& s0 = steps.front()->shape();
  if (s0.size() != 4) fail(ErrorKind::ShapeMismatch, "step features must be [B][C][H][W], got " + shape_str(s0));
  const std::int64_t B = s0[0], C = s0[1], P = s0[2] * s0[3];
  std::vector<ag::Var> parts;
  for (const auto& v : steps) {
    if (v->shape() != s0) fail(ErrorKind::ShapeMismatch, "step features differ in shape");
    parts.push_back(ag::reshape(v, {B, 1, C, P}));
  }
  ag::Var stacked = parts.size() == 1 ? parts[0] : ag::concat(parts, 1);
  const std::int64_t S = static_cast<std::int64_t>(steps.size());
  return ag::reshape(ag::permute(stacked, {0, 1, 3, 2}), {B * S * P, C});
}

// Mean row-wise softmax cross-entropy of A Z^T against the diagonal.
LossReport infonce(const ag::Var& pred, const ag::Var& target) {
  const std::int64_t R = pred->shape()[0], C = pred->shape()[1];
  CMapM A(pred->value.ptr(), R, C);
  CMapM Z(target->value.ptr(), R, C);
  MatRM probs = A * Z.transpose();
  double total = 0.0;
  std::int64_t correct = 0;
  for (std::int64_t r = 0; r < R; ++r) {
    auto row = probs.row(r);
    const double pos = row(r);
    bool strict = true;
    for (std::int64_t j = 0; j < R; ++j) {
      if (j != r && row(j) >= pos) {
        strict = false;
        break;
      }
    }
    if (strict) ++correct;
    const double m = row.maxCoeff();
    const double z = (row.array() - m).exp().sum();
    const double lse = m + std::log(z);
    total += lse - pos;
    row = (row.array() - lse).exp();
  }
  LossReport report;
  report.num_candidates = R;
  report.value = total / static_cast<double>(R);
  report.top1_accuracy = static_cast<double>(correct) / static_cast<double>(R);
  if (!std::isfinite(report.value)) fail(ErrorKind::DivergedTraining, "contrastive loss is not finite");
  report.loss = ag::make_result(
      Tensor::scalar(report.value), {pred, target},
      [R, C, probs = std::move(probs)](ag::Node& self) {
        MatRM G = probs;
        G.diagonal().array() -= 1.0;
        G *= self.grad[0] / static_cast<double>(R);
        ag::Node& pn = *self.inputs[0];
        ag::Node& tn = *self.inputs[1];
        if (pn.requires_grad) {
          MapM dA(pn.grad_buffer().ptr(), R, C);
          dA.noalias() += G * CMapM(tn.value.ptr(), R, C);
        }
        if (tn.requires_grad) {
          MapM dZ(tn.grad_buffer().ptr(), R, C);
          dZ.noalias() += G.transpose() * CMapM(pn.value.ptr(), R, C);
        }
      });
  return report;
}

void check_tensor_pair(const Tensor& predicted, const Tensor& target) {
  if (predicted.rank() != 5 || predicted.shape() != target.shape()) {
    fail(ErrorKind::ShapeMismatch, "expected matching [B][S][C][H][W] tensors, got " +
                                       shape_str(predicted.shape()) + " and " +
                                       shape_str(target.shape()));
  }
  if (!predicted.all_finite() || !target.all_finite()) {
    fail(ErrorKind::NonFiniteInput, "contrastive inputs must be finite");
  }
}

}  // namespace

LossReport dense_contrastive_loss(const DensePairBatch& batch, bool normalized) {
  if (batch.predicted.empty() || batch.predicted.size() != batch.target.size()) {
    fail(ErrorKind::DegenerateBatch, "need the same non-zero number of predicted and target steps");
  }
  ag::Var pred = flatten_steps(batch.predicted);
  ag::Var target = flatten_steps(batch.target);
  if (pred->shape() != target->shape()) {
    fail(ErrorKind::ShapeMismatch, "predicted and target features differ in shape");
  }
  if (pred->shape()[0] < 2) {
    fail(ErrorKind::DegenerateBatch, "contrastive loss needs at least two candidates");
  }
  if (normalized) {
    pred = ag::l2_normalize_rows(pred);
    target = ag::l2_normalize_rows(target);
  }
  return infonce(pred, target);
}

LossReport dense_contrastive_loss(const Tensor& predicted, const Tensor& target, bool normalized) {
  check_tensor_pair(predicted, target);
  const auto& s = predicted.shape();
  const std::int64_t B = s[0], S = s[1], C = s[2], H = s[3], W = s[4];
  DensePairBatch batch;
  for (std::int64_t k = 0; k < S; ++k) {
    Tensor p({B, C, H, W}), t({B, C, H, W});
    const std::int64_t chunk = C * H * W;
    for (std::int64_t b = 0; b < B; ++b) {
      std::copy_n(predicted.ptr() + (b * S + k) * chunk, chunk, p.ptr() + b * chunk);
      std::copy_n(target.ptr() + (b * S + k) * chunk, chunk, t.ptr() + b * chunk);
    }
    batch.predicted.push_back(ag::constant(std::move(p)));
    batch.target.push_back(ag::constant(std::move(t)));
  }
  return dense_contrastive_loss(batch, normalized);
}

double contrastive_loss_oracle(const Tensor& predicted, const Tensor& target, bool normalized) {
  check_tensor_pair(predicted, target);
  const auto& s = predicted.shape();
  const std::int64_t B = s[0], S = s[1], C = s[2], H = s[3], W = s[4];
  const std::int64_t n = B * S * H * W;
  if (n < 2) fail(ErrorKind::DegenerateBatch, "contrastive loss needs at least two candidates");
  if (n > 256) fail(ErrorKind::DegenerateBatch, "oracle is limited to 256 candidates");

  auto feature = [&](const Tensor& t, std::int64_t b, std::int64_t k, std::int64_t h,
                     std::int64_t w, std::int64_t c) {
    return t[(((b * S + k) * C + c) * H + h) * W + w];
  };
  auto score = [&](std::int64_t b1, std::int64_t k1, std::int64_t h1, std::int64_t w1,
                   std::int64_t b2, std::int64_t k2, std::int64_t h2, std::int64_t w2) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      const double a = feature(predicted, b1, k1, h1, w1, c);
      const double z = feature(target, b2, k2, h2, w2, c);
      dot += a * z;
      na += a * a;
      nb += z * z;
    }
    if (!normalized) return dot;
    if (na == 0.0 || nb == 0.0) fail(ErrorKind::ZeroVector, "normalized critic on a zero vector");
    return dot / std::sqrt(na * nb);
  };

  double total = 0.0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t k = 0; k < S; ++k)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w) {
          const double positive = score(b, k, h, w, b, k, h, w);
          // Stabilize with the largest score in the row.
          double m = positive;
          for (std::int64_t b2 = 0; b2 < B; ++b2)
            for (std::int64_t k2 = 0; k2 < S; ++k2)
              for (std::int64_t h2 = 0; h2 < H; ++h2)
                for (std::int64_t w2 = 0; w2 < W; ++w2)
                  m = std::max(m, score(b, k, h, w, b2, k2, h2, w2));
          double denominator = std::exp(positive - m);
          for (std::int64_t b2 = 0; b2 < B; ++b2)
            for (std::int64_t k2 = 0; k2 < S; ++k2)
              for (std::int64_t h2 = 0; h2 < H; ++h2)
                for (std::int64_t w2 = 0; w2 < W; ++w2) {
                  if (b2 == b && k2 == k && h2 == h && w2 == w) continue;
                  denominator += std::exp(score(b, k, h, w, b2, k2, h2, w2) - m);
                }
          total += -((positive - m) - std::log(denominator));
        }
  return total / static_cast<double>(n);
}

double combine_bidirectional(double forward_loss, double backward_loss) {
  return 0.5 * (forward_loss + backward_loss);
}

ag::Var combine_bidirectional(const ag::Var& forward_loss, const ag::Var& backward_loss) {
  return ag::scale(ag::add(forward_loss, backward_loss), 0.5);
}

}  // namespace memdpc::loss
