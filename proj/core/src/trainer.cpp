#include "cissl/trainer.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cissl/errors.hpp"
#include "cissl/eval.hpp"
#include "cissl/log.hpp"
#include "cissl/ops.hpp"

namespace cissl {

double cosine_lr(double lr0, std::size_t t, std::size_t total_iters) {
  if (total_iters == 0) return lr0;
  if (t > total_iters) throw std::out_of_range("cosine_lr: t exceeds T");
  const double frac = static_cast<double>(t) / static_cast<double>(total_iters);
  return lr0 * std::cos(7.0 * std::numbers::pi * frac / 16.0);
}

TrainState init_state(const ExperimentConfig& cfg) {
  const Rng root(cfg.train.seed);
  Rng model_rng = root.split(0);
  const auto shape = cfg.model_shape();
  TrainState s{0, CisslModel(shape, model_rng), FeatureBank(shape.feature_dim()), root.split(1), {}};
  return s;
}

StepBatch draw_step_batch(const LongTailDataset& ds, const ExperimentConfig& cfg, Rng& rng) {
  StepBatch b;
  b.indices = sample_batch(ds, cfg.train.batch_labeled, cfg.train.uratio, rng);
  b.labels.reserve(b.indices.labeled.size());
  for (auto i : b.indices.labeled) b.labels.push_back(ds.labeled_labels()[i]);
  const double sigma = ds.spec().noise_sigma;
  const Tensor2D lx = ds.labeled_features().gather_rows(b.indices.labeled);
  const Tensor2D ux = ds.unlabeled_features().gather_rows(b.indices.unlabeled);
  b.labeled_weak = augment_rows(lx, AugmentMode::weak, sigma, cfg.augment, rng);
  b.unlabeled_weak = augment_rows(ux, AugmentMode::weak, sigma, cfg.augment, rng);
  b.unlabeled_strong = augment_rows(ux, AugmentMode::strong, sigma, cfg.augment, rng);
  return b;
}

StepViews forward_views(const CisslModel& model, const StepBatch& batch) {
  return StepViews{forward(model, batch.labeled_weak), forward(model, batch.unlabeled_weak),
                   forward(model, batch.unlabeled_strong)};
}

StepContext build_step_context(const StepViews& views, const StepBatch& batch,
                               const LongTailDataset& ds, FeatureBank& bank, std::size_t iter,
                               const ExperimentConfig& cfg, Rng& rng, bool include_contrastive) {
  const TrainConfig& tc = cfg.train;
  const std::size_t num_classes = ds.num_classes();
  StepContext ctx;
  ctx.use_aux = tc.method != Method::fixmatch;
  ctx.backbone_pseudo = pseudo_label(views.unlabeled_weak.backbone_probs, tc.conf_threshold);
  if (!ctx.use_aux) return ctx;

  ctx.aux_pseudo = pseudo_label(views.unlabeled_weak.aux_probs, tc.conf_threshold);

  bank_update(bank, batch.indices.labeled_keys, views.labeled_weak.features,
              views.labeled_weak.aux_probs, batch.labels, tc.bank_threshold);
  bank_update(bank, batch.indices.unlabeled_keys, views.unlabeled_weak.features,
              views.unlabeled_weak.aux_probs, {}, tc.bank_threshold);

  ClassCounts counts;
  if (tc.mask_counts == MaskCountSource::bank) {
    counts.source = ClassCounts::Source::bank_estimated;
    for (auto c : bank.class_counts(num_classes)) counts.counts.push_back(static_cast<double>(c));
  } else {
    for (auto c : ds.counts_labeled()) counts.counts.push_back(static_cast<double>(c));
  }
  ctx.masks = draw_abc_masks(counts, batch.labels, ctx.aux_pseudo.hard_labels, rng);

  if (!include_contrastive || tc.method != Method::bacon || iter < tc.warmup_iters) return ctx;

  ctx.contrastive = true;
  ctx.anchors = compute_anchors(bank, num_classes);
  const auto bank_counts = bank.class_counts(num_classes);
  const BtaSchedule sched{tc.temp_base, tc.bta_eta, tc.total_iters, tc.bta_mode};
  ctx.positive_temps = class_temperatures(sched, iter, bank_counts);
  ctx.negative_temp = tc.temp_base;

  const std::size_t nl = batch.labels.size();
  ctx.assigned = batch.labels;
  ctx.assigned.insert(ctx.assigned.end(), ctx.aux_pseudo.hard_labels.begin(),
                      ctx.aux_pseudo.hard_labels.end());
  ctx.participates.assign(nl, 1);
  ctx.participates.insert(ctx.participates.end(), ctx.aux_pseudo.accept_mask.begin(),
                          ctx.aux_pseudo.accept_mask.end());

  ctx.negatives.resize(num_classes);
  if (tc.use_rns) {
    const Tensor2D probs = vstack(views.labeled_weak.aux_probs, views.unlabeled_weak.aux_probs);
    for (std::size_t k = 0; k < num_classes; ++k) {
      ctx.negatives[k] = rns_negatives(k, probs, batch.labels, tc.bank_threshold, tc.rns_n);
    }
  } else {
    for (std::size_t k = 0; k < num_classes; ++k) {
      ctx.negatives[k] = other_class_negatives(k, ctx.assigned);
    }
  }
  return ctx;
}

StepLosses step_losses(const ForwardPass& labeled_weak, const ForwardPass& unlabeled_strong,
                       const StepBatch& batch, const StepContext& ctx, unsigned mask) {
  StepLosses out;
  StepMetrics& m = out.metrics;
  auto take = [&](unsigned term, double value, const Tensor2D& grad, Tensor2D& slot) {
    if (!(mask & term)) return;
    out.selected += value;
    slot = grad;
  };

  const auto fm = fixmatch_losses(labeled_weak.backbone_logits, batch.labels, ctx.backbone_pseudo,
                                  unlabeled_strong.backbone_logits);
  m.loss_s = fm.supervised.value;
  m.loss_u = fm.unsupervised.value;
  m.acceptance_rate = fm.acceptance_rate;
  take(kSupervisedTerm, m.loss_s, fm.supervised.grad_logits, out.labeled.backbone_logits);
  take(kUnsupervisedTerm, m.loss_u, fm.unsupervised.grad_logits, out.strong.backbone_logits);

  if (ctx.use_aux) {
    const auto abc = abc_losses(labeled_weak.aux_logits, batch.labels, ctx.aux_pseudo,
                                unlabeled_strong.aux_logits, ctx.masks);
    m.loss_cls = abc.classification.value;
    m.loss_consis = abc.consistency.value;
    take(kClassificationTerm, m.loss_cls, abc.classification.grad_logits, out.labeled.aux_logits);
    take(kConsistencyTerm, m.loss_consis, abc.consistency.grad_logits, out.strong.aux_logits);
  }
  m.loss_total = backbone_loss(m.loss_s, m.loss_u, m.loss_cls, m.loss_consis);

  if (ctx.contrastive) {
    const Tensor2D feats = vstack(labeled_weak.features, unlabeled_strong.features);
    ContrastiveBatch cb;
    cb.features = &feats;
    cb.assigned = ctx.assigned;
    cb.participates = ctx.participates;
    cb.anchors = &ctx.anchors;
    cb.negatives = &ctx.negatives;
    cb.positive_temps = ctx.positive_temps;
    cb.negative_temp = ctx.negative_temp;
    const auto res = bacon_loss(cb);
    m.loss_bacon = res.loss;
    m.contrastive_active = true;
    m.loss_total += res.loss;
    if (mask & kContrastiveTerm) {
      out.selected += res.loss;
      const std::size_t nl = labeled_weak.features.rows();
      const std::size_t d = feats.cols();
      out.labeled.features = Tensor2D(nl, d);
      out.strong.features = Tensor2D(feats.rows() - nl, d);
      const auto g = res.grad_features.values();
      std::copy(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(nl * d),
                out.labeled.features.values().begin());
      std::copy(g.begin() + static_cast<std::ptrdiff_t>(nl * d), g.end(),
                out.strong.features.values().begin());
    }
  }
  return out;
}

double step_loss_value(const CisslModel& model, const StepBatch& batch, const StepContext& ctx,
                       unsigned mask) {
  const auto lw = forward(model, batch.labeled_weak);
  const auto us = forward(model, batch.unlabeled_strong);
  return step_losses(lw, us, batch, ctx, mask).selected;
}

StepLosses accumulate_step_gradients(CisslModel& model, const StepBatch& batch,
                                     const StepContext& ctx, unsigned mask) {
  const auto lw = forward(model, batch.labeled_weak);
  const auto us = forward(model, batch.unlabeled_strong);
  auto losses = step_losses(lw, us, batch, ctx, mask);
  backward(model, lw, losses.labeled);
  backward(model, us, losses.strong);
  return losses;
}

namespace {

std::string batch_dump(const StepBatch& batch) {
  auto list = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (auto i : v) s += (s.empty() ? "" : " ") + std::to_string(i);
    return s;
  };
  return "labeled rows [" + list(batch.indices.labeled) + "], unlabeled rows [" +
         list(batch.indices.unlabeled) + "]";
}

template <bool kWithContrastive>
StepMetrics step_impl(TrainState& state, const LongTailDataset& ds, const ExperimentConfig& cfg) {
  const TrainConfig& tc = cfg.train;
  if (state.iter >= tc.total_iters) throw std::logic_error("train_step: training already complete");
  const StepBatch batch = draw_step_batch(ds, cfg, state.rng);
  const StepViews views = forward_views(state.model, batch);
  StepLosses losses;
  try {
    const StepContext ctx =
        build_step_context(views, batch, ds, state.bank, state.iter, cfg, state.rng, kWithContrastive);
    losses = step_losses(views.labeled_weak, views.unlabeled_strong, batch, ctx);
    if (!std::isfinite(losses.metrics.loss_total)) throw NumericError("non-finite loss");
    state.model.zero_grad();
    backward(state.model, views.labeled_weak, losses.labeled);
    backward(state.model, views.unlabeled_strong, losses.strong);
    sgd_step(state.model, cosine_lr(tc.lr0, state.iter, tc.total_iters),
             SgdOptions{tc.momentum, tc.weight_decay});
  } catch (const NumericError& e) {
    throw NumericError("iteration " + std::to_string(state.iter) + ": " + e.what() + "; " +
                       batch_dump(batch));
  }
  ++state.iter;
  return losses.metrics;
}

}  // namespace

StepMetrics train_step(TrainState& state, const LongTailDataset& ds, const ExperimentConfig& cfg) {
  return step_impl<true>(state, ds, cfg);
}

StepMetrics train_step_without_contrastive(TrainState& state, const LongTailDataset& ds,
                                           const ExperimentConfig& cfg) {
  return step_impl<false>(state, ds, cfg);
}

Head eval_head(const ExperimentConfig& cfg) noexcept {
  return cfg.train.method == Method::fixmatch ? kBackboneHead : kAuxHead;
}

std::vector<int> inference(const CisslModel& model, const Tensor2D& x) {
  return predict(model, x, kAuxHead);
}

void run_training(TrainState& state, const LongTailDataset& ds, const ExperimentConfig& cfg,
                  const TrainHooks& hooks) {
  const TrainConfig& tc = cfg.train;
  const Head head = eval_head(cfg);
  std::uint64_t floor_hits = cross_entropy_floor_hits();
  while (state.iter < tc.total_iters) {
    const StepMetrics m = train_step(state, ds, cfg);
    if (state.iter % tc.eval_every != 0 && state.iter != tc.total_iters) continue;

    HistoryRow row;
    row.iter = state.iter;
    row.step = m;
    const auto preds = predict(state.model, ds.test_features(), head);
    row.recall = per_class_recall(confusion_matrix(preds, ds.test_labels(), ds.num_classes()));
    for (double r : row.recall) row.balanced_accuracy += r;
    row.balanced_accuracy /= static_cast<double>(ds.num_classes());
    row.bank_size = state.bank.size();
    state.history.push_back(row);
    if (hooks.on_eval) hooks.on_eval(row);

    const std::uint64_t hits = cross_entropy_floor_hits();
    if (hits != floor_hits) {
      log_warning("cross-entropy probability floor hit " + std::to_string(hits - floor_hits) +
                  " times before iteration " + std::to_string(state.iter));
      floor_hits = hits;
    }
  }
}

TrainState run_training(const ExperimentConfig& cfg, const LongTailDataset& ds) {
  cfg.validate();
  TrainState state = init_state(cfg);
  run_training(state, ds, cfg);
  return state;
}

ProtocolResult frozen_backbone_protocol(const ExperimentConfig& cfg,
                                        const LongTailDataset& balanced,
                                        const LongTailDataset& imbalanced,
                                        const ProtocolOptions& options) {
  if (balanced.num_labeled() != imbalanced.num_labeled() ||
      balanced.num_unlabeled() != imbalanced.num_unlabeled()) {
    throw std::invalid_argument("frozen_backbone_protocol: datasets differ in size");
  }
  ExperimentConfig c = cfg;
  c.train.method = Method::abc;
  c.validate();

  ProtocolResult out;
  out.joint = init_state(c);
  run_training(out.joint, imbalanced, c);

  ExperimentConfig phase1 = c;
  phase1.train.total_iters = options.phase1_iters.value_or(c.train.total_iters);
  phase1.train.warmup_iters = std::min(phase1.train.warmup_iters, phase1.train.total_iters);
  out.frozen = init_state(c);
  run_training(out.frozen, balanced, phase1);

  // Phase 2 starts from the phase-1 parameters and otherwise looks like a fresh run.
  const TrainState fresh = init_state(c);
  out.frozen.iter = 0;
  out.frozen.rng = fresh.rng;
  out.frozen.bank = fresh.bank;
  out.frozen.history.clear();
  if (options.freeze) {
    out.frozen.model.set_frozen(ParamGroup::extractor, true);
    out.frozen.model.set_frozen(ParamGroup::backbone_head, true);
    out.frozen.model.set_frozen(ParamGroup::projector, true);
  }
  run_training(out.frozen, imbalanced, c);

  const auto& x = imbalanced.test_features();
  const auto& y = imbalanced.test_labels();
  const std::size_t k = imbalanced.num_classes();
  out.acc_joint = balanced_accuracy(inference(out.joint.model, x), y, k);
  out.acc_frozen = balanced_accuracy(inference(out.frozen.model, x), y, k);
  return out;
}

}  // namespace cissl
