#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "cissl/model.hpp"

namespace cissl {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

// Central differences (L(theta + h) - L(theta - h)) / 2h per coordinate of
// theta, compared against the analytic gradient with
// |analytic - numeric| / max(1, |numeric|). theta is perturbed in place and
// restored bit-exactly. loss_fn must be deterministic: fix every seed it uses.
GradCheckResult grad_check(const std::function<double()>& loss_fn, std::span<double> theta,
                           std::span<const double> analytic, double h = 1e-6);

struct ModelGradCheckResult {
  GradCheckResult worst;
  std::string worst_parameter;
};

// Runs grad_check over every parameter of the model against the gradients
// currently held in its buffers. Parameters whose group is frozen are skipped.
ModelGradCheckResult grad_check_model(CisslModel& model, const std::function<double()>& loss_fn,
                                      double h = 1e-6);

}  // namespace cissl
