#include "cissl/audit.hpp"

#include <algorithm>

#include "cissl/gradcheck.hpp"
#include "cissl/ops.hpp"
#include "cissl/trainer.hpp"

namespace cissl {

bool AuditReport::passed() const noexcept {
  return std::all_of(cases.begin(), cases.end(), [](const AuditCase& c) { return c.passed; });
}

double AuditReport::worst_error() const noexcept {
  double w = 0.0;
  for (const auto& c : cases) w = std::max(w, c.max_rel_error);
  return w;
}

namespace {

std::size_t draw_between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

Tensor2D random_matrix(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  Tensor2D t(rows, cols);
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

// Midpoint of the sorted confidences, so roughly half the rows pass.
double split_threshold(const Tensor2D& probs) {
  std::vector<double> conf;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto p = probs.row(i);
    conf.push_back(p[argmax(p)]);
  }
  std::sort(conf.begin(), conf.end());
  const std::size_t mid = conf.size() / 2;
  return mid == 0 ? conf[0] - 1e-3 : 0.5 * (conf[mid - 1] + conf[mid]);
}

struct AuditProblem {
  CisslModel model;
  StepBatch batch;
  StepContext ctx;
};

AuditProblem make_problem(Rng& rng) {
  ModelShape shape;
  shape.input_dim = draw_between(rng, 3, 6);
  shape.hidden = {draw_between(rng, 4, 8)};
  shape.repr_dim = draw_between(rng, 3, 6);
  shape.num_classes = draw_between(rng, 3, 5);
  shape.proj_dim = draw_between(rng, 3, 6);
  shape.projection = static_cast<ProjectionMode>(rng.below(3));

  AuditProblem p{CisslModel(shape, rng), {}, {}};
  // Zero biases put every all-dead row exactly on a ReLU kink, where central
  // differences are meaningless; small positive biases keep rows off it.
  for (auto& ref : p.model.parameters()) {
    if (ref.name.ends_with(".bias")) {
      for (auto& v : ref.param->value.values()) v = rng.uniform(0.05, 0.3);
    }
  }
  const std::size_t k = shape.num_classes;
  const std::size_t nl = draw_between(rng, 3, 5);
  const std::size_t nu = draw_between(rng, 4, 7);

  StepBatch& b = p.batch;
  b.labeled_weak = random_matrix(nl, shape.input_dim, 1.5, rng);
  b.unlabeled_weak = random_matrix(nu, shape.input_dim, 1.5, rng);
  b.unlabeled_strong = b.unlabeled_weak;
  for (auto& v : b.unlabeled_strong.values()) v += rng.normal(0.0, 0.3);
  for (std::size_t i = 0; i < nl; ++i) b.labels.push_back(static_cast<int>(rng.below(k)));

  const auto views = forward_views(p.model, b);
  StepContext& ctx = p.ctx;
  ctx.backbone_pseudo =
      pseudo_label(views.unlabeled_weak.backbone_probs, split_threshold(views.unlabeled_weak.backbone_probs));
  ctx.aux_pseudo = pseudo_label(views.unlabeled_weak.aux_probs, split_threshold(views.unlabeled_weak.aux_probs));
  for (std::size_t i = 0; i < nl; ++i) ctx.masks.labeled.push_back(rng.bernoulli(0.7) ? 1.0 : 0.0);
  for (std::size_t i = 0; i < nu; ++i) ctx.masks.unlabeled.push_back(rng.bernoulli(0.7) ? 1.0 : 0.0);

  ctx.contrastive = true;
  ctx.anchors.anchors.resize(k);
  ctx.anchors.support.assign(k, 1);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> a(shape.feature_dim());
    for (auto& v : a) v = rng.normal();
    normalize_in_place(a);
    ctx.anchors.anchors[c] = std::move(a);
  }
  ctx.positive_temps.resize(k);
  for (auto& t : ctx.positive_temps) t = rng.uniform(0.07, 0.1);
  ctx.negative_temp = 0.1;
  ctx.assigned = b.labels;
  ctx.assigned.insert(ctx.assigned.end(), ctx.aux_pseudo.hard_labels.begin(), ctx.aux_pseudo.hard_labels.end());
  ctx.participates.assign(nl, 1);
  ctx.participates.insert(ctx.participates.end(), ctx.aux_pseudo.accept_mask.begin(),
                          ctx.aux_pseudo.accept_mask.end());
  const Tensor2D probs = vstack(views.labeled_weak.aux_probs, views.unlabeled_weak.aux_probs);
  const double labeled_threshold = split_threshold(views.labeled_weak.aux_probs);
  for (std::size_t c = 0; c < k; ++c) {
    ctx.negatives.push_back(rns_negatives(c, probs, b.labels, labeled_threshold, 1));
  }
  return p;
}

struct TermSpec {
  const char* name;
  unsigned mask;
};

constexpr TermSpec kTerms[] = {
    {"loss_s", kSupervisedTerm},    {"loss_u", kUnsupervisedTerm},   {"loss_cls", kClassificationTerm},
    {"loss_consis", kConsistencyTerm}, {"loss_back", kBackboneTerms}, {"loss_bacon", kContrastiveTerm},
};

}  // namespace

AuditReport run_gradient_audit(std::size_t num_configs, std::uint64_t seed, double tolerance) {
  AuditReport report;
  report.tolerance = tolerance;
  const Rng root(seed);
  for (std::size_t c = 0; c < num_configs; ++c) {
    Rng rng = root.split(c);
    AuditProblem p = make_problem(rng);
    for (const auto& term : kTerms) {
      p.model.zero_grad();
      accumulate_step_gradients(p.model, p.batch, p.ctx, term.mask);
      const auto res = grad_check_model(
          p.model, [&] { return step_loss_value(p.model, p.batch, p.ctx, term.mask); });
      AuditCase ac;
      ac.term = term.name;
      ac.config = c;
      ac.max_rel_error = res.worst.max_rel_error;
      ac.worst_parameter = res.worst_parameter;
      ac.passed = res.worst.max_rel_error < tolerance;
      report.cases.push_back(std::move(ac));
    }
  }
  return report;
}

}  // namespace cissl
