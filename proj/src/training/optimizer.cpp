#include "memdpc/training/optimizer.hpp"

#include <cmath>

#include "memdpc/core/error.hpp"

namespace memdpc::training {

Adam::Adam(ParamList params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var->value.shape());
    v_.emplace_back(p.var->value.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ag::Node& node = *params_[k].var;
    if (node.grad.size() != node.value.size()) continue;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::int64_t i = 0; i < node.value.size(); ++i) {
      const double g = node.grad[i] + opt_.weight_decay * node.value[i];
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
      node.value[i] -= update;
    }
  }
}

void Adam::export_state(std::map<std::string, Tensor>& out) const {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out["adam.m." + params_[k].name] = m_[k];
    out["adam.v." + params_[k].name] = v_[k];
  }
}

void Adam::import_state(std::map<std::string, Tensor>& arrays, std::int64_t steps) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (auto [prefix, dst] : {std::pair{"adam.m.", &m_[k]}, std::pair{"adam.v.", &v_[k]}}) {
      const std::string key = prefix + params_[k].name;
      auto it = arrays.find(key);
      if (it == arrays.end()) fail(ErrorKind::MissingParameter, "checkpoint lacks '" + key + "'");
      if (it->second.shape() != dst->shape()) {
        fail(ErrorKind::ConfigMismatch, "optimizer state '" + key + "' has shape " +
                                            shape_str(it->second.shape()));
      }
      *dst = std::move(it->second);
      arrays.erase(it);
    }
  }
  t_ = steps;
}

PlateauSchedule::PlateauSchedule(double lr, double factor, int patience, double threshold)
    : lr_(lr), factor_(factor), patience_(patience), threshold_(threshold) {}

bool PlateauSchedule::observe(double val_loss) {
  if (!has_best_ || val_loss < best_ - threshold_) {
    best_ = val_loss;
    has_best_ = true;
    bad_checks_ = 0;
    return true;
  }
  if (++bad_checks_ >= patience_ && !decayed_) {
    lr_ *= factor_;
    decayed_ = true;
  }
  return false;
}

nlohmann::json PlateauSchedule::state() const {
  return {{"lr", lr_},
          {"best", has_best_ ? nlohmann::json(best_) : nlohmann::json(nullptr)},
          {"bad_checks", bad_checks_},
          {"decayed", decayed_}};
}

void PlateauSchedule::set_state(const nlohmann::json& j) {
  try {
    lr_ = j.at("lr").get<double>();
    has_best_ = !j.at("best").is_null();
    best_ = has_best_ ? j.at("best").get<double>() : 0.0;
    bad_checks_ = j.at("bad_checks").get<int>();
    decayed_ = j.at("decayed").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CorruptArchive, std::string("malformed schedule state: ") + e.what());
  }
}

}  // namespace memdpc::training
