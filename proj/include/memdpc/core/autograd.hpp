#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "memdpc/core/tensor.hpp"

namespace memdpc::ag {

/// One value in the computation graph. Leaves are constants or parameters;
/// interior nodes carry a closure that pushes `grad` back into `inputs`.
class Node {
 public:
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  const Shape& shape() const noexcept { return value.shape(); }
  /// Gradient buffer, zero-initialized on first use.
  Tensor& grad_buffer();
  void zero_grad() { grad = Tensor(); }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value);

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Creates an interior node. When no input requires a gradient (or recording
/// is off) the result is a plain constant and `fn` is dropped.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn);

/// Reverse-mode sweep from a scalar root; gradients accumulate into leaves.
void backward(const Var& root);

}  // namespace memdpc::ag
