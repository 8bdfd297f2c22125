#pragma once

#include <cstddef>
#include <vector>

#include "ascl/config.hpp"
#include "ascl/tensor.hpp"

namespace ascl {

/// Adam or SGD with momentum and L2 weight decay over a fixed parameter list.
/// Parameters are updated in place from their accumulated gradients.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, std::vector<Tensor> params);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::size_t steps_taken() const { return t_; }

  void zero_grad();
  void step();

 private:
  OptimizerConfig cfg_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;  // first moment or momentum buffer
  std::vector<std::vector<double>> v_;  // Adam second moment
};

}  // namespace ascl
