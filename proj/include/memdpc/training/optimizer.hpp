#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "memdpc/core/params.hpp"

namespace memdpc::training {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

/// Adam with bias correction. Moments are keyed by parameter name so they
/// can travel through checkpoints.
class Adam {
 public:
  Adam(ParamList params, AdamOptions options = {});

  /// Applies one update with learning rate `lr` using the current grads.
  /// Parameters without a gradient buffer are left untouched.
  void step(double lr);
  std::int64_t steps() const { return t_; }
  const ParamList& params() const { return params_; }

  /// Arrays named "adam.m.<param>" and "adam.v.<param>".
  void export_state(std::map<std::string, Tensor>& out) const;
  /// Takes the moment arrays out of `arrays`; MissingParameter if absent.
  void import_state(std::map<std::string, Tensor>& arrays, std::int64_t steps);

 private:
  ParamList params_;
  AdamOptions opt_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

/// Decays the learning rate once, after `patience` consecutive validation
/// checks without an improvement larger than `threshold`.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor, int patience, double threshold);

  double lr() const { return lr_; }
  bool decayed() const { return decayed_; }
  double best() const { return best_; }
  bool has_best() const { return has_best_; }
  /// Feeds one validation loss; returns true when it is a new best.
  bool observe(double val_loss);

  nlohmann::json state() const;
  void set_state(const nlohmann::json& j);

 private:
  double lr_, factor_;
  int patience_;
  double threshold_;
  double best_ = 0.0;
  bool has_best_ = false;
  int bad_checks_ = 0;
  bool decayed_ = false;
};

}  // namespace memdpc::training
