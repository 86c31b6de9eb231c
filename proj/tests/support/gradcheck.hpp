#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "memdpc/core/autograd.hpp"
#include "memdpc/core/params.hpp"
#include "memdpc/core/rng.hpp"

namespace memdpc::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  int checked = 0;
  int skipped_kinks = 0;  // samples whose +-step evaluations took different branches
};

/// Relative error with a small absolute floor so that gradients which are
/// zero on both sides do not divide by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central finite differences against reverse-mode gradients. For every
/// parameter, up to `per_param` randomly chosen entries are perturbed by
/// +-step and the scalar objective is re-evaluated. An entry whose perturbed
/// evaluations change any rectifier sign or pooling winner relative to the
/// unperturbed pass is not differentiable across the interval; it is
/// replaced by another draw (at most `per_param` replacements per parameter).
inline GradCheckResult check_gradients(const ParamList& params,
                                       const std::function<ag::Var()>& objective,
                                       double step = 1e-3, int per_param = 8,
                                       std::uint64_t seed = 7) {
  zero_grads(params);
  std::uint64_t base_digest;
  ag::Var loss;
  {
    ag::BranchTrace trace;
    loss = objective();
    base_digest = trace.digest();
  }
  ag::backward(loss);
  std::vector<Tensor> analytic;
  for (const auto& p : params) {
    analytic.push_back(p.var->grad.size() == p.var->value.size() ? p.var->grad
                                                                 : Tensor(p.var->value.shape()));
  }
  GradCheckResult result;
  Rng rng(seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& value = params[k].var->value;
    const std::int64_t n = value.size();
    std::vector<std::int64_t> picks;
    const bool exhaustive = n <= per_param;
    if (exhaustive) {
      for (std::int64_t i = 0; i < n; ++i) picks.push_back(i);
    } else {
      for (int i = 0; i < per_param; ++i) picks.push_back(rng.integer(0, n - 1));
    }
    int replacements = 0;
    for (std::size_t j = 0; j < picks.size(); ++j) {
      const std::int64_t i = picks[j];
      const double saved = value[i];
      double plus, minus;
      bool kink = false;
      {
        ag::NoGradGuard guard;
        auto eval = [&](double v) {
          value[i] = v;
          ag::BranchTrace trace;
          const double f = objective()->value.item();
          kink |= trace.digest() != base_digest;
          return f;
        };
        plus = eval(saved + step);
        minus = eval(saved - step);
      }
      value[i] = saved;
      if (kink) {
        ++result.skipped_kinks;
        if (!exhaustive && replacements++ < per_param) picks.push_back(rng.integer(0, n - 1));
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double err = relative_error(analytic[k][i], numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = params[k].name + "[" + std::to_string(i) + "] analytic=" +
                       std::to_string(analytic[k][i]) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  zero_grads(params);
  return result;
}

}  // namespace memdpc::testing
