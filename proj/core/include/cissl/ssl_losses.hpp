#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cissl/rng.hpp"
#include "cissl/tensor.hpp"

namespace cissl {

// Hard pseudo-labels from weak-view predictions. accept[i] is set iff
// confidence[i] > threshold (strict); ties in the argmax go to the lower class.
struct PseudoLabelBatch {
  std::vector<int> hard_labels;
  std::vector<double> confidences;
  std::vector<std::uint8_t> accept_mask;
  Tensor2D distributions;

  std::size_t size() const noexcept { return hard_labels.size(); }
  std::size_t num_accepted() const noexcept;
};

PseudoLabelBatch pseudo_label(const Tensor2D& probs, double threshold);

// A scalar loss with its gradient w.r.t. the logits that produced it.
struct LossTerm {
  double value = 0.0;
  Tensor2D grad_logits;
};

// (1 / normalizer) * sum_i weight_i * H(softmax(logits_i), target_i).
// Rows with weight 0 contribute neither value nor gradient.
LossTerm weighted_cross_entropy(const Tensor2D& logits, std::span<const int> targets,
                                std::span<const double> weights, double normalizer);

struct FixMatchLosses {
  LossTerm supervised;    // L_S on the backbone head, weak labeled views
  LossTerm unsupervised;  // L_U on the backbone head, strong unlabeled views
  double acceptance_rate = 0.0;
};

// L_S = mean_b H(p_s(alpha(x_b)), y_b)
// L_U = (1 / B_u) sum_b 1[max q_b > tau] H(p_s(A(u_b)), qhat_b); rejected rows count in B_u.
FixMatchLosses fixmatch_losses(const Tensor2D& labeled_logits, std::span<const int> labels,
                               const PseudoLabelBatch& pseudo, const Tensor2D& strong_logits);

struct ClassCounts {
  enum class Source { labeled_ground_truth, bank_estimated };
  std::vector<double> counts;
  Source source = Source::labeled_ground_truth;

  // N_L: smallest strictly positive count (0 when every count is 0).
  double smallest_positive() const noexcept;
};

// min(1, N_L / counts[cls]); 1 with a warning when counts[cls] == 0.
double mask_probability(const ClassCounts& counts, std::size_t cls);
int bernoulli_mask(const ClassCounts& counts, std::size_t cls, Rng& rng);

struct AbcMasks {
  std::vector<double> labeled;
  std::vector<double> unlabeled;
};

// One draw per labeled row (by ground truth), then one per unlabeled row (by
// pseudo-label), in row order.
AbcMasks draw_abc_masks(const ClassCounts& counts, std::span<const int> labels,
                        std::span<const int> pseudo_labels, Rng& rng);

struct AbcLosses {
  LossTerm classification;  // L_cls on the aux head, weak labeled views
  LossTerm consistency;     // L_consis on the aux head, strong unlabeled views
};

// L_cls    = (1/B_l) sum_b M(x_b) H(p_a(alpha(x_b)), y_b)
// L_consis = (1/B_u) sum_b M(u_b) 1[max q_b > tau] H(p_a(A(u_b)), qhat_b)
AbcLosses abc_losses(const Tensor2D& labeled_aux_logits, std::span<const int> labels,
                     const PseudoLabelBatch& pseudo, const Tensor2D& strong_aux_logits,
                     const AbcMasks& masks);
// Draws fresh masks from rng, then as above.
AbcLosses abc_losses(const Tensor2D& labeled_aux_logits, std::span<const int> labels,
                     const PseudoLabelBatch& pseudo, const Tensor2D& strong_aux_logits,
                     const ClassCounts& counts, Rng& rng);

// L_S + L_U + L_cls + L_consis. Throws NumericError on a non-finite term.
double backbone_loss(double supervised, double unsupervised, double classification,
                     double consistency);

}  // namespace cissl
