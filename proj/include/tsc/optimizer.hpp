#pragma once

#include <memory>
#include <string_view>
#include <vector>

#include "tsc/tensor.hpp"

namespace tsc {

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  /// SGD only.
  double momentum = 0.9;
  /// Adam only.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Real>
class Optimizer {
 public:
  explicit Optimizer(std::vector<Tensor<Real>> parameters) : parameters_(std::move(parameters)) {}
  virtual ~Optimizer() = default;

  /// Applies one update from the gradients currently held by the parameters.
  /// Parameters without a gradient are left untouched.
  virtual void step() = 0;

  void zero_grad() {
    for (auto& p : parameters_) p.zero_grad();
  }

  const std::vector<Tensor<Real>>& parameters() const noexcept { return parameters_; }

 protected:
  std::vector<Tensor<Real>> parameters_;
};

/// Stochastic gradient descent with heavy-ball momentum.
template <typename Real>
class Sgd final : public Optimizer<Real> {
 public:
  Sgd(std::vector<Tensor<Real>> parameters, double learning_rate, double momentum);
  void step() override;

 private:
  Real learning_rate_;
  Real momentum_;
  std::vector<std::vector<Real>> velocity_;
};

template <typename Real>
class Adam final : public Optimizer<Real> {
 public:
  Adam(std::vector<Tensor<Real>> parameters, const OptimizerConfig& config);
  void step() override;

 private:
  OptimizerConfig config_;
  long steps_ = 0;
  std::vector<std::vector<Real>> first_moment_;
  std::vector<std::vector<Real>> second_moment_;
};

template <typename Real>
std::unique_ptr<Optimizer<Real>> make_optimizer(const OptimizerConfig& config,
                                                std::vector<Tensor<Real>> parameters);

}  // namespace tsc
