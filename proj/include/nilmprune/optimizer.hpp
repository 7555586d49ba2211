#pragma once

#include <cstdint>
#include <vector>

#include "nilmprune/tensor.hpp"

namespace nilmprune {

enum class OptimizerKind { SGD, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Plain SGD or bias-corrected Adam over a fixed parameter list.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Tensor> params);

  /// Throws ContractViolation when a parameter has no gradient buffer.
  void step();
  void zero_grad();

  const OptimizerConfig& config() const { return config_; }
  std::int64_t steps_taken() const { return t_; }

 private:
  OptimizerConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace nilmprune
