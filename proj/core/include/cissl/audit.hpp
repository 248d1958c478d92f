#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cissl {

struct AuditCase {
  std::string term;  // loss_s, loss_u, loss_cls, loss_consis, loss_back, loss_bacon
  std::size_t config = 0;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  bool passed = false;
};

struct AuditReport {
  double tolerance = 0.0;
  std::vector<AuditCase> cases;

  bool passed() const noexcept;
  double worst_error() const noexcept;
};

// Finite-difference audit of every training loss against backprop. Each
// configuration draws a small random network, batch, pseudo-labels, masks,
// anchors and negatives from Rng(seed).split(config), freezes all of them,
// and compares analytic and central-difference gradients per loss term.
AuditReport run_gradient_audit(std::size_t num_configs = 20, std::uint64_t seed = 7,
                               double tolerance = 1e-5);

}  // namespace cissl
