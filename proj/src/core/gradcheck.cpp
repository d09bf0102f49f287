#include "tsc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace tsc {
namespace {

double evaluate(const std::function<Tensor<double>()>& loss) {
  const Tensor<double> value = loss();
  if (value.numel() != 1) {
    throw std::invalid_argument("finite_difference_check: function must be scalar-valued, got " +
                                to_string(value.shape()));
  }
  return value.item();
}

}  // namespace

double finite_difference_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                               const Tensor<double>& x, GradCheckOptions options) {
  Tensor<double> probe = x.detach();
  probe.set_requires_grad(true);
  std::vector<Tensor<double>> params{probe};
  return finite_difference_check([&] { return f(probe); }, params, options);
}

double finite_difference_check(const std::function<Tensor<double>()>& loss,
                               std::span<Tensor<double>> parameters, GradCheckOptions options) {
  if (!(options.step > 0)) throw std::invalid_argument("finite_difference_check: step must be > 0");
  for (auto& p : parameters) p.zero_grad();
  const Tensor<double> root = loss();
  backward(root);

  double worst = 0;
  for (auto& p : parameters) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + options.step;
      const double up = evaluate(loss);
      values[i] = original - options.step;
      const double down = evaluate(loss);
      values[i] = original;
      const double numeric = (up - down) / (2 * options.step);
      const double error = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + options.epsilon);
      worst = std::max(worst, error);
    }
  }
  return worst;
}

}  // namespace tsc
