#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "danet/ops.hpp"

namespace danet {

double gradient_check(const std::function<Tensor()>& loss_fn,
                      const std::vector<Tensor>& params, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
    throw std::invalid_argument("gradient_check: epsilon must be in (0, 1e-3]");
  }
  for (const Tensor& p : params) {
    for (double v : p.data()) {
      if (!std::isfinite(v)) throw std::domain_error("gradient_check: non-finite parameter");
    }
  }
  const bool checks = finite_checks_enabled();
  set_finite_checks(true);

  std::vector<Tensor> leaves = params;
  for (Tensor& p : leaves) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor loss = loss_fn();
  loss.backward();

  double worst = 0.0;
  NoGradGuard no_grad;
  for (Tensor& p : leaves) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double up = loss_fn().item();
      values[i] = saved - epsilon;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  set_finite_checks(checks);
  return worst;
}

}  // namespace danet
