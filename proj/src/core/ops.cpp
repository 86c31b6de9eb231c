#include "memdpc/core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "memdpc/core/error.hpp"

namespace memdpc::ag {

namespace {

thread_local BranchTrace* g_branch_trace = nullptr;

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

void require(bool ok, ErrorKind kind, const std::string& msg) {
  if (!ok) fail(kind, msg);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a->shape() == b->shape(), ErrorKind::ShapeMismatch,
          std::string(op) + ": " + shape_str(a->shape()) + " vs " + shape_str(b->shape()));
}

int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, ErrorKind::ShapeMismatch, "axis out of range");
  return axis;
}

// (outer, axis, inner) factorization of a shape around one axis.
struct AxisSplit {
  std::int64_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.axis = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

struct ConvDims {
  std::int64_t n, ci, t, h, w;
  std::int64_t co, kt, kh, kw;
  std::int64_t to, ho, wo;
  std::int64_t k() const { return ci * kt * kh * kw; }
  std::int64_t p() const { return to * ho * wo; }
  std::int64_t in_size() const { return ci * t * h * w; }
};

void im2col(const double* x, const ConvDims& d, const ConvGeometry& g, double* col) {
  const std::int64_t p = d.p();
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < d.ci; ++c) {
    const double* xc = x + c * d.t * d.h * d.w;
    for (std::int64_t a = 0; a < d.kt; ++a) {
      for (std::int64_t b = 0; b < d.kh; ++b) {
        for (std::int64_t e = 0; e < d.kw; ++e, ++row) {
          double* out = col + row * p;
          for (std::int64_t ot = 0; ot < d.to; ++ot) {
            const std::int64_t it = ot * g.stride_t - g.pad_t + a;
            for (std::int64_t oh = 0; oh < d.ho; ++oh) {
              const std::int64_t ih = oh * g.stride_h - g.pad_h + b;
              double* o = out + (ot * d.ho + oh) * d.wo;
              if (it < 0 || it >= d.t || ih < 0 || ih >= d.h) {
                std::fill(o, o + d.wo, 0.0);
                continue;
              }
              const double* xr = xc + (it * d.h + ih) * d.w;
              for (std::int64_t ow = 0; ow < d.wo; ++ow) {
                const std::int64_t iw = ow * g.stride_w - g.pad_w + e;
                o[ow] = (iw >= 0 && iw < d.w) ? xr[iw] : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvDims& d, const ConvGeometry& g, double* dx) {
  const std::int64_t p = d.p();
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < d.ci; ++c) {
    double* xc = dx + c * d.t * d.h * d.w;
    for (std::int64_t a = 0; a < d.kt; ++a) {
      for (std::int64_t b = 0; b < d.kh; ++b) {
        for (std::int64_t e = 0; e < d.kw; ++e, ++row) {
          const double* in = col + row * p;
          for (std::int64_t ot = 0; ot < d.to; ++ot) {
            const std::int64_t it = ot * g.stride_t - g.pad_t + a;
            if (it < 0 || it >= d.t) continue;
            for (std::int64_t oh = 0; oh < d.ho; ++oh) {
              const std::int64_t ih = oh * g.stride_h - g.pad_h + b;
              if (ih < 0 || ih >= d.h) continue;
              const double* o = in + (ot * d.ho + oh) * d.wo;
              double* xr = xc + (it * d.h + ih) * d.w;
              for (std::int64_t ow = 0; ow < d.wo; ++ow) {
                const std::int64_t iw = ow * g.stride_w - g.pad_w + e;
                if (iw >= 0 && iw < d.w) xr[iw] += o[ow];
              }
            }
          }
        }
      }
    }
  }
}

template <typename F>
Var unary(const Var& x, F forward, double (*derivative)(double in, double out)) {
  Tensor out(x->shape());
  const auto& in = x->value;
  for (std::int64_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  return make_result(std::move(out), {x}, [derivative](Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    auto& g = src.grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * derivative(src.value[i], self.value[i]);
    }
  });
}

}  // namespace

Var conv3d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g) {
  const auto& xs = x->shape();
  const auto& ws = weight->shape();
  require(xs.size() == 5, ErrorKind::ShapeMismatch, "conv3d input must be 5-D, got " + shape_str(xs));
  require(ws.size() == 5 && ws[1] == xs[1], ErrorKind::ShapeMismatch,
          "conv3d weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  ConvDims d{xs[0], xs[1], xs[2], xs[3], xs[4], ws[0], ws[2], ws[3], ws[4], 0, 0, 0};
  d.to = (d.t + 2 * g.pad_t - d.kt) / g.stride_t + 1;
  d.ho = (d.h + 2 * g.pad_h - d.kh) / g.stride_h + 1;
  d.wo = (d.w + 2 * g.pad_w - d.kw) / g.stride_w + 1;
  require(d.to > 0 && d.ho > 0 && d.wo > 0, ErrorKind::ShapeMismatch,
          "conv3d output would be empty for input " + shape_str(xs));
  if (bias) require(bias->value.size() == d.co, ErrorKind::ShapeMismatch, "conv3d bias size");

  const bool direct = d.kt == 1 && d.kh == 1 && d.kw == 1 && g.stride_t == 1 && g.stride_h == 1 &&
                      g.stride_w == 1 && g.pad_t == 0 && g.pad_h == 0 && g.pad_w == 0;
  const std::int64_t K = d.k(), P = d.p();
  Tensor out(Shape{d.n, d.co, d.to, d.ho, d.wo});
  std::vector<double> col(direct ? 0 : static_cast<std::size_t>(K * P));
  CMapM W(weight->value.ptr(), d.co, K);
  for (std::int64_t n = 0; n < d.n; ++n) {
    const double* xn = x->value.ptr() + n * d.in_size();
    if (!direct) im2col(xn, d, g, col.data());
    CMapM C(direct ? xn : col.data(), K, P);
    MapM O(out.ptr() + n * d.co * P, d.co, P);
    O.noalias() = W * C;
    if (bias) {
      for (std::int64_t c = 0; c < d.co; ++c) O.row(c).array() += bias->value[c];
    }
  }

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [d, g, direct](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    const std::int64_t K = d.k(), P = d.p();
    std::vector<double> col(direct ? 0 : static_cast<std::size_t>(K * P));
    std::vector<double> dcol(static_cast<std::size_t>(K * P));
    CMapM W(wn.value.ptr(), d.co, K);
    for (std::int64_t n = 0; n < d.n; ++n) {
      CMapM dO(self.grad.ptr() + n * d.co * P, d.co, P);
      const double* xin = xn.value.ptr() + n * d.in_size();
      if (wn.requires_grad) {
        if (!direct) im2col(xin, d, g, col.data());
        CMapM C(direct ? xin : col.data(), K, P);
        MapM dW(wn.grad_buffer().ptr(), d.co, K);
        dW.noalias() += dO * C.transpose();
      }
      if (bn && bn->requires_grad) {
        auto& db = bn->grad_buffer();
        for (std::int64_t c = 0; c < d.co; ++c) db[c] += dO.row(c).sum();
      }
      if (xn.requires_grad) {
        double* dx = xn.grad_buffer().ptr() + n * d.in_size();
        if (direct) {
          MapM dX(dx, K, P);
          dX.noalias() += W.transpose() * dO;
        } else {
          MapM dC(dcol.data(), K, P);
          dC.noalias() = W.transpose() * dO;
          col2im(dcol.data(), d, g, dx);
        }
      }
    }
  });
}

Var pointwise(const Var& x, const Var& weight, const Var& bias) {
  const auto& xs = x->shape();
  const auto& ws = weight->shape();
  require(xs.size() >= 2 && ws.size() == 2 && ws[1] == xs[1], ErrorKind::ShapeMismatch,
          "pointwise weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  const std::int64_t N = xs[0], Ci = xs[1], Co = ws[0];
  const std::int64_t P = numel(xs) / (N * Ci);
  if (bias) require(bias->value.size() == Co, ErrorKind::ShapeMismatch, "pointwise bias size");
  Shape os = xs;
  os[1] = Co;
  Tensor out(os);
  CMapM W(weight->value.ptr(), Co, Ci);
  for (std::int64_t n = 0; n < N; ++n) {
    CMapM X(x->value.ptr() + n * Ci * P, Ci, P);
    MapM O(out.ptr() + n * Co * P, Co, P);
    O.noalias() = W * X;
    if (bias) {
      for (std::int64_t c = 0; c < Co; ++c) O.row(c).array() += bias->value[c];
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [N, Ci, Co, P](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    CMapM W(wn.value.ptr(), Co, Ci);
    for (std::int64_t n = 0; n < N; ++n) {
      CMapM dO(self.grad.ptr() + n * Co * P, Co, P);
      if (wn.requires_grad) {
        CMapM X(xn.value.ptr() + n * Ci * P, Ci, P);
        MapM dW(wn.grad_buffer().ptr(), Co, Ci);
        dW.noalias() += dO * X.transpose();
      }
      if (bn && bn->requires_grad) {
        auto& db = bn->grad_buffer();
        for (std::int64_t c = 0; c < Co; ++c) db[c] += dO.row(c).sum();
      }
      if (xn.requires_grad) {
        MapM dX(xn.grad_buffer().ptr() + n * Ci * P, Ci, P);
        dX.noalias() += W.transpose() * dO;
      }
    }
  });
}

Var max_pool3d(const Var& x, const PoolGeometry& g) {
  const auto& xs = x->shape();
  require(xs.size() == 5, ErrorKind::ShapeMismatch, "max_pool3d input must be 5-D");
  const std::int64_t NC = xs[0] * xs[1], T = xs[2], H = xs[3], W = xs[4];
  const std::int64_t To = (T + 2 * g.pad_t - g.kernel_t) / g.stride_t + 1;
  const std::int64_t Ho = (H + 2 * g.pad_h - g.kernel_h) / g.stride_h + 1;
  const std::int64_t Wo = (W + 2 * g.pad_w - g.kernel_w) / g.stride_w + 1;
  require(To > 0 && Ho > 0 && Wo > 0, ErrorKind::ShapeMismatch, "max_pool3d output empty");
  Tensor out(Shape{xs[0], xs[1], To, Ho, Wo});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(out.size()));
  const double* in = x->value.ptr();
  std::int64_t o = 0;
  for (std::int64_t nc = 0; nc < NC; ++nc) {
    const std::int64_t base = nc * T * H * W;
    for (std::int64_t ot = 0; ot < To; ++ot)
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_i = -1;
          for (int a = 0; a < g.kernel_t; ++a) {
            const std::int64_t it = ot * g.stride_t - g.pad_t + a;
            if (it < 0 || it >= T) continue;
            for (int b = 0; b < g.kernel_h; ++b) {
              const std::int64_t ih = oh * g.stride_h - g.pad_h + b;
              if (ih < 0 || ih >= H) continue;
              for (int e = 0; e < g.kernel_w; ++e) {
                const std::int64_t iw = ow * g.stride_w - g.pad_w + e;
                if (iw < 0 || iw >= W) continue;
                const std::int64_t idx = base + (it * H + ih) * W + iw;
                if (in[idx] > best) {
                  best = in[idx];
                  best_i = idx;
                }
              }
            }
          }
          out[o] = best;
          arg[static_cast<std::size_t>(o)] = best_i;
        }
  }
  if (g_branch_trace)
    for (auto a : arg) g_branch_trace->mix(static_cast<std::uint64_t>(a));
  return make_result(std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[static_cast<std::int64_t>(i)];
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
               bool training, double momentum, double eps) {
  const auto& xs = x->shape();
  require(xs.size() >= 2, ErrorKind::ShapeMismatch, "batch_norm needs [N][C]...");
  const std::int64_t N = xs[0], C = xs[1], R = numel(xs) / (N * C), M = N * R;
  require(gamma->value.size() == C && beta->value.size() == C, ErrorKind::ShapeMismatch,
          "batch_norm affine size");
  if (state.running_mean.size() != C) {
    state.running_mean = Tensor(Shape{C}, 0.0);
    state.running_var = Tensor(Shape{C}, 1.0);
  }
  std::vector<double> mean(C), invstd(C);
  const double* in = x->value.ptr();
  if (training) {
    require(M > 1, ErrorKind::DegenerateBatch, "batch_norm needs more than one value per channel");
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const double* p = in + (n * C + c) * R;
        for (std::int64_t r = 0; r < R; ++r) s += p[r];
      }
      const double mu = s / static_cast<double>(M);
      double v = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const double* p = in + (n * C + c) * R;
        for (std::int64_t r = 0; r < R; ++r) v += (p[r] - mu) * (p[r] - mu);
      }
      const double var = v / static_cast<double>(M);
      mean[c] = mu;
      invstd[c] = 1.0 / std::sqrt(var + eps);
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mu;
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] +
                             momentum * v / static_cast<double>(M - 1);
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }
  Tensor xhat(xs), out(xs);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t off = (n * C + c) * R;
      const double gm = gamma->value[c], bt = beta->value[c];
      for (std::int64_t r = 0; r < R; ++r) {
        const double h = (in[off + r] - mean[c]) * invstd[c];
        xhat[off + r] = h;
        out[off + r] = gm * h + bt;
      }
    }
  return make_result(
      std::move(out), {x, gamma, beta},
      [N, C, R, M, training, invstd = std::move(invstd), xhat = std::move(xhat)](Node& self) {
        Node& xn = *self.inputs[0];
        Node& gn = *self.inputs[1];
        Node& bn = *self.inputs[2];
        const double* dy = self.grad.ptr();
        for (std::int64_t c = 0; c < C; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const std::int64_t off = (n * C + c) * R;
            for (std::int64_t r = 0; r < R; ++r) {
              sum_dy += dy[off + r];
              sum_dy_xhat += dy[off + r] * xhat[off + r];
            }
          }
          if (gn.requires_grad) gn.grad_buffer()[c] += sum_dy_xhat;
          if (bn.requires_grad) bn.grad_buffer()[c] += sum_dy;
          if (!xn.requires_grad) continue;
          auto& dx = xn.grad_buffer();
          const double k = gn.value[c] * invstd[c];
          const double inv_m = 1.0 / static_cast<double>(M);
          for (std::int64_t n = 0; n < N; ++n) {
            const std::int64_t off = (n * C + c) * R;
            for (std::int64_t r = 0; r < R; ++r) {
              if (training) {
                dx[off + r] += k * (dy[off + r] - inv_m * sum_dy - xhat[off + r] * inv_m * sum_dy_xhat);
              } else {
                dx[off + r] += k * dy[off + r];
              }
            }
          }
        }
      });
}

BranchTrace::BranchTrace() : previous_(g_branch_trace) { g_branch_trace = this; }
BranchTrace::~BranchTrace() { g_branch_trace = previous_; }

Var relu(const Var& x) {
  if (g_branch_trace) {
    std::uint64_t word = 0;
    const std::int64_t n = x->value.size();
    for (std::int64_t i = 0; i < n; ++i) {
      word = (word << 1) | (x->value[i] > 0.0 ? 1u : 0u);
      if (i % 64 == 63 || i + 1 == n) g_branch_trace->mix(word), word = 0;
    }
  }
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double out) { return out * (1.0 - out); });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double out) { return 1.0 - out * out; });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a->value;
  out.add_(b->value);
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->grad_buffer().add_(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buffer().add_(self.grad);
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a->shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.grad_buffer();
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.grad_buffer();
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an.value[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x->value;
  for (auto& v : out.data()) v *= factor;
  return make_result(std::move(out), {x}, [factor](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var mean_axis(const Var& x, int axis) {
  axis = norm_axis(axis, x->value.rank());
  const AxisSplit s = split_at(x->shape(), axis);
  Shape os = x->shape();
  os.erase(os.begin() + axis);
  Tensor out(os);
  const double inv = 1.0 / static_cast<double>(s.axis);
  const double* in = x->value.ptr();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t a = 0; a < s.axis; ++a)
      for (std::int64_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += in[(o * s.axis + a) * s.inner + i] * inv;
  return make_result(std::move(out), {x}, [s, inv](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t a = 0; a < s.axis; ++a)
        for (std::int64_t i = 0; i < s.inner; ++i)
          g[(o * s.axis + a) * s.inner + i] += self.grad[o * s.inner + i] * inv;
  });
}

Var softmax(const Var& x, int axis) {
  axis = norm_axis(axis, x->value.rank());
  const AxisSplit s = split_at(x->shape(), axis);
  Tensor out(x->shape());
  const double* in = x->value.ptr();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const std::int64_t base = o * s.axis * s.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (std::int64_t a = 0; a < s.axis; ++a) m = std::max(m, in[base + a * s.inner]);
      double z = 0.0;
      for (std::int64_t a = 0; a < s.axis; ++a) {
        const double e = std::exp(in[base + a * s.inner] - m);
        out[base + a * s.inner] = e;
        z += e;
      }
      for (std::int64_t a = 0; a < s.axis; ++a) out[base + a * s.inner] /= z;
    }
  return make_result(std::move(out), {x}, [s](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const std::int64_t base = o * s.axis * s.inner + i;
        double dot = 0.0;
        for (std::int64_t a = 0; a < s.axis; ++a) dot += self.grad[base + a * s.inner] * y[base + a * s.inner];
        for (std::int64_t a = 0; a < s.axis; ++a) {
          const std::int64_t k = base + a * s.inner;
          g[k] += y[k] * (self.grad[k] - dot);
        }
      }
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  require(!parts.empty(), ErrorKind::EmptySequence, "concat of nothing");
  const int rank = parts[0]->value.rank();
  axis = norm_axis(axis, rank);
  Shape os = parts[0]->shape();
  os[axis] = 0;
  for (const auto& p : parts) {
    Shape ps = p->shape();
    require(static_cast<int>(ps.size()) == rank, ErrorKind::ShapeMismatch, "concat rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != axis) {
        require(ps[i] == parts[0]->shape()[i], ErrorKind::ShapeMismatch,
                "concat: " + shape_str(ps) + " vs " + shape_str(parts[0]->shape()));
      }
    }
    os[axis] += ps[axis];
  }
  const AxisSplit total = split_at(os, axis);
  Tensor out(os);
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const AxisSplit s = split_at(p->shape(), axis);
    offsets.push_back(offset);
    const std::int64_t chunk = s.axis * s.inner;
    for (std::int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(p->value.ptr() + o * chunk, chunk,
                  out.ptr() + o * total.axis * total.inner + offset * total.inner);
    }
    offset += s.axis;
  }
  return make_result(std::move(out), parts, [axis, total, offsets](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      const AxisSplit s = split_at(in.shape(), axis);
      const std::int64_t chunk = s.axis * s.inner;
      auto& g = in.grad_buffer();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        const double* src = self.grad.ptr() + o * total.axis * total.inner + offsets[k] * total.inner;
        double* dst = g.ptr() + o * chunk;
        for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  });
}

Var index_select(const Var& x, int axis, const std::vector<std::int64_t>& indices) {
  axis = norm_axis(axis, x->value.rank());
  const AxisSplit s = split_at(x->shape(), axis);
  for (auto i : indices) {
    require(i >= 0 && i < s.axis, ErrorKind::ShapeMismatch, "index_select index out of range");
  }
  Shape os = x->shape();
  os[axis] = static_cast<std::int64_t>(indices.size());
  const std::int64_t m = os[axis];
  Tensor out(os);
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t j = 0; j < m; ++j)
      std::copy_n(x->value.ptr() + (o * s.axis + indices[j]) * s.inner, s.inner,
                  out.ptr() + (o * m + j) * s.inner);
  return make_result(std::move(out), {x}, [s, m, indices](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t j = 0; j < m; ++j) {
        double* dst = g.ptr() + (o * s.axis + indices[j]) * s.inner;
        const double* src = self.grad.ptr() + (o * m + j) * s.inner;
        for (std::int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x->value.reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var permute(const Var& x, const std::vector<int>& order) {
  const Shape& xs = x->shape();
  const int rank = static_cast<int>(xs.size());
  require(static_cast<int>(order.size()) == rank, ErrorKind::ShapeMismatch, "permute rank");
  Shape os(rank);
  std::vector<std::int64_t> in_stride(rank), src_stride(rank);
  std::int64_t acc = 1;
  for (int i = rank - 1; i >= 0; --i) {
    in_stride[i] = acc;
    acc *= xs[i];
  }
  for (int i = 0; i < rank; ++i) {
    os[i] = xs[order[i]];
    src_stride[i] = in_stride[order[i]];
  }
  // Precompute the gather map once; used by both passes.
  const std::int64_t total = numel(xs);
  std::vector<std::int64_t> gather(static_cast<std::size_t>(total));
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t src = 0;
  for (std::int64_t o = 0; o < total; ++o) {
    gather[static_cast<std::size_t>(o)] = src;
    for (int ax = rank - 1; ax >= 0; --ax) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < os[ax]) break;
      src -= src_stride[ax] * os[ax];
      idx[ax] = 0;
    }
  }
  Tensor out(os);
  for (std::int64_t o = 0; o < total; ++o) out[o] = x->value[gather[static_cast<std::size_t>(o)]];
  return make_result(std::move(out), {x}, [gather = std::move(gather)](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < gather.size(); ++o) g[gather[o]] += self.grad[static_cast<std::int64_t>(o)];
  });
}

Var l2_normalize_rows(const Var& x) {
  require(x->value.rank() == 2, ErrorKind::ShapeMismatch, "l2_normalize_rows expects [R][C]");
  const std::int64_t R = x->shape()[0], C = x->shape()[1];
  Tensor out(x->shape());
  std::vector<double> norms(static_cast<std::size_t>(R));
  for (std::int64_t r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::int64_t c = 0; c < C; ++c) s += x->value[r * C + c] * x->value[r * C + c];
    const double n = std::sqrt(s);
    if (n == 0.0) fail(ErrorKind::ZeroVector, "cannot L2-normalize a zero vector");
    norms[r] = n;
    for (std::int64_t c = 0; c < C; ++c) out[r * C + c] = x->value[r * C + c] / n;
  }
  return make_result(std::move(out), {x}, [R, C, norms = std::move(norms)](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    for (std::int64_t r = 0; r < R; ++r) {
      double dot = 0.0;
      for (std::int64_t c = 0; c < C; ++c) dot += self.grad[r * C + c] * y[r * C + c];
      for (std::int64_t c = 0; c < C; ++c) {
        g[r * C + c] += (self.grad[r * C + c] - y[r * C + c] * dot) / norms[r];
      }
    }
  });
}

Var memory_read(const Var& prob, const Var& bank) {
  const auto& ps = prob->shape();
  const auto& bs = bank->shape();
  require(bs.size() == 2 && ps.size() >= 2 && ps[1] == bs[0], ErrorKind::DimensionMismatch,
          "addressing " + shape_str(ps) + " does not match memory bank " + shape_str(bs));
  const std::int64_t N = ps[0], K = bs[0], C = bs[1], P = numel(ps) / (N * K);
  Shape os = ps;
  os[1] = C;
  Tensor out(os);
  CMapM M(bank->value.ptr(), K, C);
  for (std::int64_t n = 0; n < N; ++n) {
    CMapM Pn(prob->value.ptr() + n * K * P, K, P);
    MapM O(out.ptr() + n * C * P, C, P);
    O.noalias() = M.transpose() * Pn;
  }
  return make_result(std::move(out), {prob, bank}, [N, K, C, P](Node& self) {
    Node& pn = *self.inputs[0];
    Node& bn = *self.inputs[1];
    CMapM M(bn.value.ptr(), K, C);
    for (std::int64_t n = 0; n < N; ++n) {
      CMapM dO(self.grad.ptr() + n * C * P, C, P);
      if (pn.requires_grad) {
        MapM dP(pn.grad_buffer().ptr() + n * K * P, K, P);
        dP.noalias() += M * dO;
      }
      if (bn.requires_grad) {
        CMapM Pn(pn.value.ptr() + n * K * P, K, P);
        MapM dM(bn.grad_buffer().ptr(), K, C);
        dM.noalias() += Pn * dO.transpose();
      }
    }
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  require(logits->value.rank() == 2, ErrorKind::ShapeMismatch, "cross_entropy expects [N][K]");
  const std::int64_t N = logits->shape()[0], K = logits->shape()[1];
  require(static_cast<std::int64_t>(labels.size()) == N, ErrorKind::LengthMismatch,
          "cross_entropy label count");
  Tensor probs(logits->shape());
  double loss = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    const double* row = logits->value.ptr() + n * K;
    require(labels[n] >= 0 && labels[n] < K, ErrorKind::ShapeMismatch, "label out of range");
    const double m = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(row[k] - m);
    const double lse = m + std::log(z);
    loss += lse - row[labels[n]];
    for (std::int64_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(row[k] - lse);
  }
  loss /= static_cast<double>(N);
  return make_result(Tensor::scalar(loss), {logits},
                     [N, K, labels, probs = std::move(probs)](Node& self) {
                       auto& g = self.inputs[0]->grad_buffer();
                       const double s = self.grad[0] / static_cast<double>(N);
                       for (std::int64_t n = 0; n < N; ++n)
                         for (std::int64_t k = 0; k < K; ++k)
                           g[n * K + k] += s * (probs[n * K + k] - (k == labels[n] ? 1.0 : 0.0));
                     });
}

Var dropout(const Var& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  require(p < 1.0, ErrorKind::InvalidPolicy, "dropout probability must be < 1");
  Tensor mask(x->shape());
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask.data()) m = rng.bernoulli(p) ? 0.0 : keep;
  Tensor out(x->shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = x->value[i] * mask[i];
  return make_result(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(weights.size() == x->value.size(), ErrorKind::ShapeMismatch, "weighted_sum size");
  double s = 0.0;
  for (std::int64_t i = 0; i < weights.size(); ++i) s += x->value[i] * weights[i];
  return make_result(Tensor::scalar(s), {x}, [weights](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

Var mean_all(const Var& x) {
  const double n = static_cast<double>(x->value.size());
  const double s = std::accumulate(x->value.data().begin(), x->value.data().end(), 0.0);
  return make_result(Tensor::scalar(s / n), {x}, [n](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] / n;
  });
}

}  // namespace memdpc::ag
