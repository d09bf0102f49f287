#include "tsc/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tsc {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

template <typename Real>
Sgd<Real>::Sgd(std::vector<Tensor<Real>> parameters, double learning_rate, double momentum)
    : Optimizer<Real>(std::move(parameters)),
      learning_rate_(static_cast<Real>(learning_rate)),
      momentum_(static_cast<Real>(momentum)) {
  for (const auto& p : this->parameters_) velocity_.emplace_back(p.numel(), Real(0));
}

template <typename Real>
void Sgd<Real>::step() {
  for (std::size_t i = 0; i < this->parameters_.size(); ++i) {
    auto& p = this->parameters_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto values = p.mutable_data();
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      v[k] = momentum_ * v[k] + g[k];
      values[k] -= learning_rate_ * v[k];
    }
  }
}

template <typename Real>
Adam<Real>::Adam(std::vector<Tensor<Real>> parameters, const OptimizerConfig& config)
    : Optimizer<Real>(std::move(parameters)), config_(config) {
  for (const auto& p : this->parameters_) {
    first_moment_.emplace_back(p.numel(), Real(0));
    second_moment_.emplace_back(p.numel(), Real(0));
  }
}

template <typename Real>
void Adam<Real>::step() {
  ++steps_;
  const Real beta1 = static_cast<Real>(config_.beta1);
  const Real beta2 = static_cast<Real>(config_.beta2);
  const Real eps = static_cast<Real>(config_.epsilon);
  const Real lr = static_cast<Real>(config_.learning_rate);
  const Real correction1 = Real(1) - static_cast<Real>(std::pow(config_.beta1, steps_));
  const Real correction2 = Real(1) - static_cast<Real>(std::pow(config_.beta2, steps_));
  for (std::size_t i = 0; i < this->parameters_.size(); ++i) {
    auto& p = this->parameters_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto values = p.mutable_data();
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = beta1 * m[k] + (Real(1) - beta1) * g[k];
      v[k] = beta2 * v[k] + (Real(1) - beta2) * g[k] * g[k];
      const Real m_hat = m[k] / correction1;
      const Real v_hat = v[k] / correction2;
      values[k] -= lr * (m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

template <typename Real>
std::unique_ptr<Optimizer<Real>> make_optimizer(const OptimizerConfig& config,
                                                std::vector<Tensor<Real>> parameters) {
  if (config.learning_rate < 0) throw std::invalid_argument("optimizer: learning rate must be >= 0");
  if (config.kind == OptimizerKind::Sgd) {
    return std::make_unique<Sgd<Real>>(std::move(parameters), config.learning_rate, config.momentum);
  }
  return std::make_unique<Adam<Real>>(std::move(parameters), config);
}

template class Sgd<float>;
template class Sgd<double>;
template class Adam<float>;
template class Adam<double>;
template std::unique_ptr<Optimizer<float>> make_optimizer(const OptimizerConfig&,
                                                          std::vector<Tensor<float>>);
template std::unique_ptr<Optimizer<double>> make_optimizer(const OptimizerConfig&,
                                                           std::vector<Tensor<double>>);

}  // namespace tsc
