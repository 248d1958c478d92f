#include "cissl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cissl {

GradCheckResult grad_check(const std::function<double()>& loss_fn, std::span<double> theta,
                           std::span<const double> analytic, double h) {
  if (theta.size() != analytic.size()) {
    throw std::invalid_argument("grad_check: theta and analytic gradient differ in length");
  }
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  GradCheckResult result;
  result.coordinates = theta.size();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double up = loss_fn();
    theta[i] = saved - h;
    const double down = loss_fn();
    theta[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    if (err > result.max_rel_error || (i == 0 && result.max_rel_error == 0.0)) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  return result;
}

ModelGradCheckResult grad_check_model(CisslModel& model, const std::function<double()>& loss_fn,
                                      double h) {
  ModelGradCheckResult out;
  bool first = true;
  for (auto& p : model.parameters()) {
    if (model.is_frozen(p.group)) continue;
    const Tensor2D analytic = p.param->grad;
    const auto r = grad_check(loss_fn, p.param->value.values(), analytic.values(), h);
    if (first || r.max_rel_error > out.worst.max_rel_error) {
      out.worst = r;
      out.worst_parameter = p.name;
      first = false;
    }
  }
  return out;
}

}  // namespace cissl
