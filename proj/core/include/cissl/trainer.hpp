#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "cissl/bacon.hpp"
#include "cissl/config.hpp"
#include "cissl/datagen.hpp"
#include "cissl/model.hpp"
#include "cissl/rng.hpp"
#include "cissl/ssl_losses.hpp"

namespace cissl {

// lr0 * cos(7 pi t / (16 T)); lr0 when T = 0.
double cosine_lr(double lr0, std::size_t t, std::size_t total_iters);

// Loss values of one step. Terms a method does not use stay 0.
struct StepMetrics {
  double loss_s = 0.0;
  double loss_u = 0.0;
  double loss_cls = 0.0;
  double loss_consis = 0.0;
  double loss_bacon = 0.0;
  double loss_total = 0.0;
  double acceptance_rate = 0.0;
  bool contrastive_active = false;
  bool operator==(const StepMetrics&) const = default;
};

struct HistoryRow {
  std::size_t iter = 0;  // steps completed
  StepMetrics step;      // metrics of the last completed step
  double balanced_accuracy = 0.0;
  std::vector<double> recall;
  std::size_t bank_size = 0;
  bool operator==(const HistoryRow&) const = default;
};

struct TrainState {
  std::size_t iter = 0;
  CisslModel model;
  FeatureBank bank;
  Rng rng;
  std::vector<HistoryRow> history;
};

// Model from Rng(seed).split(0), step stream Rng(seed).split(1), empty bank.
TrainState init_state(const ExperimentConfig& cfg);

// The three augmented views of one sampled batch.
struct StepBatch {
  BatchIndices indices;
  std::vector<int> labels;
  Tensor2D labeled_weak;
  Tensor2D unlabeled_weak;
  Tensor2D unlabeled_strong;
};

// sample_batch, then weak labeled, weak unlabeled and strong unlabeled views, all from rng.
StepBatch draw_step_batch(const LongTailDataset& ds, const ExperimentConfig& cfg, Rng& rng);

// Everything a step treats as constant: pseudo-labels, masks and the
// contrastive targets. Rows of the contrastive batch are the labeled rows
// followed by the unlabeled rows.
struct StepContext {
  bool use_aux = true;
  bool contrastive = false;
  PseudoLabelBatch backbone_pseudo;  // backbone head on weak unlabeled views
  PseudoLabelBatch aux_pseudo;       // aux head on weak unlabeled views
  AbcMasks masks;
  AnchorSet anchors;
  std::vector<std::vector<std::size_t>> negatives;
  std::vector<double> positive_temps;
  double negative_temp = 0.1;
  std::vector<int> assigned;
  std::vector<std::uint8_t> participates;
};

struct StepViews {
  ForwardPass labeled_weak;
  ForwardPass unlabeled_weak;
  ForwardPass unlabeled_strong;
};

StepViews forward_views(const CisslModel& model, const StepBatch& batch);

// Draws the masks from rng, updates the bank (any method but fixmatch) and,
// when include_contrastive and iter >= warmup_iters under method bacon,
// derives anchors, temperatures and negatives from the updated bank.
// Mask counts come from the labeled split or from the bank per cfg.
StepContext build_step_context(const StepViews& views, const StepBatch& batch,
                               const LongTailDataset& ds, FeatureBank& bank, std::size_t iter,
                               const ExperimentConfig& cfg, Rng& rng,
                               bool include_contrastive = true);

enum LossTermMask : unsigned {
  kSupervisedTerm = 1u << 0,
  kUnsupervisedTerm = 1u << 1,
  kClassificationTerm = 1u << 2,
  kConsistencyTerm = 1u << 3,
  kContrastiveTerm = 1u << 4,
  kBackboneTerms = kSupervisedTerm | kUnsupervisedTerm | kClassificationTerm | kConsistencyTerm,
  kAllTerms = kBackboneTerms | kContrastiveTerm,
};

struct StepLosses {
  StepMetrics metrics;    // every term, regardless of the mask
  double selected = 0.0;  // sum of the masked terms
  HeadGrads labeled;      // upstream gradients for the weak labeled pass
  HeadGrads strong;       // upstream gradients for the strong unlabeled pass
};

// Losses and their head gradients given fixed context; the gradients cover
// only the terms in mask.
StepLosses step_losses(const ForwardPass& labeled_weak, const ForwardPass& unlabeled_strong,
                       const StepBatch& batch, const StepContext& ctx,
                       unsigned mask = kAllTerms);

// Re-runs the differentiable part of a step for finite-difference checks.
double step_loss_value(const CisslModel& model, const StepBatch& batch, const StepContext& ctx,
                       unsigned mask = kAllTerms);

// Accumulates the gradient of the masked loss into the model's buffers.
StepLosses accumulate_step_gradients(CisslModel& model, const StepBatch& batch,
                                     const StepContext& ctx, unsigned mask = kAllTerms);

// One iteration: batch, context (bank update included), gradients,
// sgd_step at cosine_lr(t), t += 1. Throws NumericError naming the batch
// indices when the loss is not finite.
StepMetrics train_step(TrainState& state, const LongTailDataset& ds, const ExperimentConfig& cfg);

// Identical to train_step except that the contrastive path is never built.
StepMetrics train_step_without_contrastive(TrainState& state, const LongTailDataset& ds,
                                           const ExperimentConfig& cfg);

// Aux head for abc and bacon; fixmatch never trains the aux head, so its
// runs are scored with the backbone head.
Head eval_head(const ExperimentConfig& cfg) noexcept;

// Argmax of the aux-head softmax, ties to the lower class.
std::vector<int> inference(const CisslModel& model, const Tensor2D& x);

struct TrainHooks {
  std::function<void(const HistoryRow&)> on_eval;
};

// Runs state.iter .. T, evaluating on the test split after every step whose
// count is a multiple of eval_every and after the last one.
void run_training(TrainState& state, const LongTailDataset& ds, const ExperimentConfig& cfg,
                  const TrainHooks& hooks = {});
TrainState run_training(const ExperimentConfig& cfg, const LongTailDataset& ds);

struct ProtocolOptions {
  bool freeze = true;
  std::optional<std::size_t> phase1_iters;  // T when unset
};

struct ProtocolResult {
  double acc_joint = 0.0;
  double acc_frozen = 0.0;
  TrainState joint;
  TrainState frozen;
};

// Run A trains jointly on the imbalanced data. Run B trains on the balanced
// data for phase1_iters, then restarts the schedule, the step stream and the
// bank and trains on the imbalanced data with everything except the aux head
// frozen. Both runs use method abc. The datasets must have equal labeled and
// unlabeled totals.
ProtocolResult frozen_backbone_protocol(const ExperimentConfig& cfg,
                                        const LongTailDataset& balanced,
                                        const LongTailDataset& imbalanced,
                                        const ProtocolOptions& options = {});

}  // namespace cissl
