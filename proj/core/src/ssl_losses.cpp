#include "cissl/ssl_losses.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cissl/errors.hpp"
#include "cissl/log.hpp"
#include "cissl/ops.hpp"

namespace cissl {

std::size_t PseudoLabelBatch::num_accepted() const noexcept {
  return static_cast<std::size_t>(std::count(accept_mask.begin(), accept_mask.end(), 1));
}

PseudoLabelBatch pseudo_label(const Tensor2D& probs, double threshold) {
  PseudoLabelBatch out;
  const std::size_t n = probs.rows();
  out.hard_labels.resize(n);
  out.confidences.resize(n);
  out.accept_mask.resize(n);
  out.distributions = probs;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.row(i);
    const std::size_t k = argmax(row);
    out.hard_labels[i] = static_cast<int>(k);
    out.confidences[i] = row[k];
    out.accept_mask[i] = row[k] > threshold ? 1 : 0;
  }
  return out;
}

LossTerm weighted_cross_entropy(const Tensor2D& logits, std::span<const int> targets,
                                std::span<const double> weights, double normalizer) {
  if (targets.size() != logits.rows() || weights.size() != logits.rows()) {
    throw std::invalid_argument("weighted_cross_entropy: row count mismatch");
  }
  if (!(normalizer > 0.0)) throw std::invalid_argument("weighted_cross_entropy: normalizer must be positive");
  LossTerm out;
  out.grad_logits = Tensor2D(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (weights[i] == 0.0) continue;
    const auto t = static_cast<std::size_t>(targets[i]);
    const auto p = softmax(logits.row(i));
    out.value += weights[i] * cross_entropy(p, t);
    auto g = out.grad_logits.row(i);
    const double w = weights[i] / normalizer;
    for (std::size_t c = 0; c < p.size(); ++c) g[c] = w * (p[c] - (c == t ? 1.0 : 0.0));
  }
  out.value /= normalizer;
  return out;
}

FixMatchLosses fixmatch_losses(const Tensor2D& labeled_logits, std::span<const int> labels,
                               const PseudoLabelBatch& pseudo, const Tensor2D& strong_logits) {
  if (labeled_logits.rows() == 0 || strong_logits.rows() == 0) {
    throw std::invalid_argument("fixmatch_losses: empty batch");
  }
  if (pseudo.size() != strong_logits.rows()) {
    throw std::invalid_argument("fixmatch_losses: pseudo-labels do not match the strong batch");
  }
  FixMatchLosses out;
  const std::vector<double> ones(labeled_logits.rows(), 1.0);
  out.supervised = weighted_cross_entropy(labeled_logits, labels, ones,
                                          static_cast<double>(labeled_logits.rows()));
  std::vector<double> accept(pseudo.size());
  for (std::size_t i = 0; i < accept.size(); ++i) accept[i] = pseudo.accept_mask[i];
  out.unsupervised = weighted_cross_entropy(strong_logits, pseudo.hard_labels, accept,
                                            static_cast<double>(strong_logits.rows()));
  out.acceptance_rate =
      static_cast<double>(pseudo.num_accepted()) / static_cast<double>(pseudo.size());
  return out;
}

double ClassCounts::smallest_positive() const noexcept {
  double best = 0.0;
  for (double c : counts) {
    if (c > 0.0 && (best == 0.0 || c < best)) best = c;
  }
  return best;
}

double mask_probability(const ClassCounts& counts, std::size_t cls) {
  if (cls >= counts.counts.size()) throw std::out_of_range("mask_probability: class out of range");
  const double n = counts.counts[cls];
  if (!(n > 0.0)) {
    // Bank-estimated counts start empty; keep the log readable.
    static std::atomic<int> warned{0};
    if (warned.fetch_add(1) < 10) log_warning("Bernoulli mask for class " + std::to_string(cls) +
                " with zero count; using parameter 1");
    return 1.0;
  }
  return std::min(1.0, counts.smallest_positive() / n);
}

int bernoulli_mask(const ClassCounts& counts, std::size_t cls, Rng& rng) {
  return rng.bernoulli(mask_probability(counts, cls)) ? 1 : 0;
}

AbcMasks draw_abc_masks(const ClassCounts& counts, std::span<const int> labels,
                        std::span<const int> pseudo_labels, Rng& rng) {
  AbcMasks m;
  m.labeled.reserve(labels.size());
  m.unlabeled.reserve(pseudo_labels.size());
  for (int y : labels) m.labeled.push_back(bernoulli_mask(counts, static_cast<std::size_t>(y), rng));
  for (int q : pseudo_labels) {
    m.unlabeled.push_back(bernoulli_mask(counts, static_cast<std::size_t>(q), rng));
  }
  return m;
}

AbcLosses abc_losses(const Tensor2D& labeled_aux_logits, std::span<const int> labels,
                     const PseudoLabelBatch& pseudo, const Tensor2D& strong_aux_logits,
                     const AbcMasks& masks) {
  if (masks.labeled.size() != labeled_aux_logits.rows() ||
      masks.unlabeled.size() != strong_aux_logits.rows() || pseudo.size() != strong_aux_logits.rows()) {
    throw std::invalid_argument("abc_losses: mask or pseudo-label count mismatch");
  }
  AbcLosses out;
  out.classification = weighted_cross_entropy(labeled_aux_logits, labels, masks.labeled,
                                              static_cast<double>(labeled_aux_logits.rows()));
  std::vector<double> w(pseudo.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = masks.unlabeled[i] * pseudo.accept_mask[i];
  out.consistency = weighted_cross_entropy(strong_aux_logits, pseudo.hard_labels, w,
                                           static_cast<double>(strong_aux_logits.rows()));
  return out;
}

AbcLosses abc_losses(const Tensor2D& labeled_aux_logits, std::span<const int> labels,
                     const PseudoLabelBatch& pseudo, const Tensor2D& strong_aux_logits,
                     const ClassCounts& counts, Rng& rng) {
  const auto masks = draw_abc_masks(counts, labels, pseudo.hard_labels, rng);
  return abc_losses(labeled_aux_logits, labels, pseudo, strong_aux_logits, masks);
}

double backbone_loss(double supervised, double unsupervised, double classification,
                     double consistency) {
  if (!std::isfinite(supervised) || !std::isfinite(unsupervised) || !std::isfinite(classification) ||
      !std::isfinite(consistency)) {
    throw NumericError("backbone_loss: non-finite component");
  }
  return supervised + unsupervised + classification + consistency;
}

}  // namespace cissl
