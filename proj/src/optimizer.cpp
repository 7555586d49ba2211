#include "nilmprune/optimizer.hpp"

#include <cmath>
#include <utility>

#include "nilmprune/errors.hpp"

namespace nilmprune {

Optimizer::Optimizer(OptimizerConfig config, std::vector<Tensor> params)
    : config_(config), params_(std::move(params)) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (config_.kind == OptimizerKind::Adam) {
    if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
        !(config_.beta2 >= 0.0 && config_.beta2 < 1.0) || !(config_.epsilon > 0.0)) {
      throw ConfigError("Adam hyperparameters out of range");
    }
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw ContractViolation("optimizer step on parameter " + std::to_string(i) +
                              " without a gradient; call backward() first");
    }
  }
  ++t_;
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::SGD) {
    for (auto& p : params_) {
      auto w = p.data();
      auto g = std::as_const(p).grad();
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
    }
    return;
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].data();
    auto g = std::as_const(params_[i]).grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace nilmprune
