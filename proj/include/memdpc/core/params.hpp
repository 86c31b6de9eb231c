#pragma once

#include <string>
#include <vector>

#include "memdpc/core/autograd.hpp"

namespace memdpc {

/// A learnable array with its checkpoint name.
struct NamedParam {
  std::string name;
  ag::Var var;
};

/// A non-learned state array (e.g. running statistics) with its checkpoint name.
struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

using ParamList = std::vector<NamedParam>;
using BufferList = std::vector<NamedBuffer>;

inline void zero_grads(const ParamList& params) {
  for (const auto& p : params) p.var->zero_grad();
}

}  // namespace memdpc
