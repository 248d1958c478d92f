#include "cissl/bacon.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cissl/csv.hpp"
#include "cissl/errors.hpp"
#include "cissl/log.hpp"
#include "cissl/ops.hpp"

namespace cissl {

void FeatureBank::put(std::size_t key, std::span<const double> feature, int cls) {
  if (feature.size() != dim_) throw std::invalid_argument("FeatureBank::put: feature width mismatch");
  Entry e{std::vector<double>(feature.begin(), feature.end()), cls};
  if (normalize_in_place(e.feature) == 0.0) {
    throw std::invalid_argument("FeatureBank::put: zero feature cannot be normalized");
  }
  entries_.insert_or_assign(key, std::move(e));
}

void FeatureBank::restore(std::size_t key, std::vector<double> unit_feature, int cls) {
  if (unit_feature.size() != dim_) throw std::invalid_argument("FeatureBank::restore: feature width mismatch");
  entries_.insert_or_assign(key, Entry{std::move(unit_feature), cls});
}

std::vector<std::size_t> FeatureBank::class_counts(std::size_t num_classes) const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& [key, e] : entries_) {
    if (e.cls >= 0 && static_cast<std::size_t>(e.cls) < num_classes) ++counts[static_cast<std::size_t>(e.cls)];
  }
  return counts;
}

void bank_update(FeatureBank& bank, std::span<const std::size_t> keys, const Tensor2D& features,
                 const Tensor2D& aux_probs, std::span<const int> ground_truth, double threshold) {
  if (keys.size() != features.rows() || aux_probs.rows() != features.rows() ||
      (!ground_truth.empty() && ground_truth.size() != features.rows())) {
    throw std::invalid_argument("bank_update: row count mismatch");
  }
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto p = aux_probs.row(i);
    const std::size_t pred = argmax(p);
    if (!(p[pred] > threshold)) continue;
    // A zero feature carries no direction to store.
    if (l2_norm(features.row(i)) == 0.0) continue;
    const int cls = ground_truth.empty() ? static_cast<int>(pred) : ground_truth[i];
    bank.put(keys[i], features.row(i), cls);
  }
}

AnchorSet compute_anchors(const FeatureBank& bank, std::size_t num_classes) {
  AnchorSet out;
  out.anchors.resize(num_classes);
  out.support.assign(num_classes, 0);
  std::vector<std::vector<double>> sums(num_classes, std::vector<double>(bank.dim(), 0.0));
  for (const auto& [key, e] : bank.entries()) {
    if (e.cls < 0 || static_cast<std::size_t>(e.cls) >= num_classes) continue;
    const auto k = static_cast<std::size_t>(e.cls);
    ++out.support[k];
    for (std::size_t j = 0; j < e.feature.size(); ++j) sums[k][j] += e.feature[j];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (out.support[k] == 0) continue;
    auto& v = sums[k];
    const double inv = 1.0 / static_cast<double>(out.support[k]);
    for (auto& x : v) x *= inv;
    if (normalize_in_place(v) > 0.0) out.anchors[k] = std::move(v);
  }
  return out;
}

std::size_t confidence_rank(std::span<const double> probs, std::size_t k) noexcept {
  std::size_t rank = 1;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] > probs[k] || (probs[j] == probs[k] && j < k)) ++rank;
  }
  return rank;
}

std::vector<std::size_t> rns_negatives(std::size_t k, const Tensor2D& aux_probs,
                                       std::span<const int> labels, double tau_th,
                                       std::size_t top_n) {
  if (labels.size() > aux_probs.rows()) throw std::invalid_argument("rns_negatives: more labels than rows");
  if (k >= aux_probs.cols()) throw std::out_of_range("rns_negatives: class out of range");
  if (top_n >= aux_probs.cols() && aux_probs.rows() > labels.size()) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      log_warning("rns_negatives: top_n >= K, so no unlabeled sample can be a negative");
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < aux_probs.rows(); ++i) {
    const auto p = aux_probs.row(i);
    if (i < labels.size()) {
      if (labels[i] != static_cast<int>(k) && p[argmax(p)] > tau_th) out.push_back(i);
    } else if (confidence_rank(p, k) > top_n) {
      out.push_back(i);
    }
  }
  return out;
}

std::vector<std::size_t> other_class_negatives(std::size_t k, std::span<const int> assigned) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assigned.size(); ++i) {
    if (assigned[i] != static_cast<int>(k)) out.push_back(i);
  }
  return out;
}

double bta_temperature(const BtaSchedule& sched, std::size_t t, double class_count,
                       double max_count) {
  if (!(sched.eta >= 0.0 && sched.eta < 1.0)) throw ConfigError("bta_eta must lie in [0, 1)");
  if (!(sched.temp_base > 0.0)) throw ConfigError("temp_base must be positive");
  if (t > sched.total_iters) throw ConfigError("bta_temperature: t exceeds T");
  if (!(class_count > 0.0 && class_count <= max_count)) {
    throw ConfigError("bta_temperature: need 0 < N_c <= N_max");
  }
  const double ratio = std::sqrt(class_count / max_count);
  switch (sched.mode) {
    case BtaMode::off:
      return sched.temp_base;
    case BtaMode::naive:
      return sched.temp_base * (1.0 - ratio * sched.eta);
    case BtaMode::decay: {
      const double remain = sched.total_iters == 0
                                ? 0.0
                                : 1.0 - static_cast<double>(t) / static_cast<double>(sched.total_iters);
      return sched.temp_base * (1.0 - remain * remain * ratio * sched.eta);
    }
  }
  return sched.temp_base;
}

std::vector<double> class_temperatures(const BtaSchedule& sched, std::size_t t,
                                       std::span<const std::size_t> bank_counts) {
  std::size_t max_count = 1;
  for (auto c : bank_counts) max_count = std::max(max_count, c);
  std::vector<double> out(bank_counts.size());
  for (std::size_t k = 0; k < bank_counts.size(); ++k) {
    const double nc = bank_counts[k] == 0 ? 1.0 : static_cast<double>(bank_counts[k]);
    out[k] = bta_temperature(sched, t, nc, static_cast<double>(max_count));
  }
  return out;
}

namespace {

// d cos(x, y) / dx, scaled by coef and added into gx.
void add_cosine_grad(std::span<const double> x, double nx, std::span<const double> y, double ny,
                     double cos_xy, double coef, std::span<double> gx) {
  const double a = coef / (nx * ny);
  const double b = coef * cos_xy / (nx * nx);
  for (std::size_t j = 0; j < x.size(); ++j) gx[j] += a * y[j] - b * x[j];
}

}  // namespace

BaconResult bacon_loss(const ContrastiveBatch& batch) {
  if (batch.features == nullptr || batch.anchors == nullptr || batch.negatives == nullptr) {
    throw std::invalid_argument("bacon_loss: incomplete batch");
  }
  const Tensor2D& f = *batch.features;
  const std::size_t n = f.rows();
  const std::size_t num_classes = batch.anchors->num_classes();
  if (batch.assigned.size() != n || batch.participates.size() != n) {
    throw std::invalid_argument("bacon_loss: per-row metadata length mismatch");
  }
  if (batch.negatives->size() != num_classes || batch.positive_temps.size() != num_classes) {
    throw std::invalid_argument("bacon_loss: per-class metadata length mismatch");
  }
  if (!(batch.negative_temp > 0.0)) throw std::invalid_argument("bacon_loss: temperature must be positive");

  BaconResult out;
  out.grad_features = Tensor2D(n, f.cols());
  for (std::size_t i = 0; i < n; ++i) out.participating += batch.participates[i] ? 1 : 0;
  if (out.participating == 0) return out;
  const double big_b = static_cast<double>(out.participating);

  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = l2_norm(f.row(i));

  std::vector<double> cos_q, s_q;
  std::vector<std::size_t> live;
  for (std::size_t b = 0; b < n; ++b) {
    if (!batch.participates[b] || norms[b] == 0.0) continue;
    const int cls = batch.assigned[b];
    if (cls < 0 || static_cast<std::size_t>(cls) >= num_classes) continue;
    const auto k = static_cast<std::size_t>(cls);
    if (!batch.anchors->has(k)) continue;
    ++out.scored;

    const auto x = f.row(b);
    const std::vector<double>& anchor = *batch.anchors->anchors[k];
    const double tau_k = batch.positive_temps[k];
    const double cos_p_raw = dot(x, anchor) / norms[b];
    const double s_p = std::clamp(cos_p_raw, -1.0, 1.0) / tau_k;

    live.clear();
    for (std::size_t q : (*batch.negatives)[k]) {
      if (q >= n) throw std::out_of_range("bacon_loss: negative row out of range");
      if (norms[q] > 0.0) live.push_back(q);
    }
    if (live.empty()) continue;  // log(e^s / e^s) = 0, no gradient

    const double lambda = big_b / static_cast<double>(live.size());
    const double log_lambda = std::log(lambda);
    cos_q.resize(live.size());
    s_q.resize(live.size());
    double hi = s_p;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto y = f.row(live[i]);
      cos_q[i] = dot(x, y) / (norms[b] * norms[live[i]]);
      s_q[i] = std::clamp(cos_q[i], -1.0, 1.0) / batch.negative_temp;
      hi = std::max(hi, s_q[i] + log_lambda);
    }
    const double e_p = std::exp(s_p - hi);
    double denom = e_p;
    for (std::size_t i = 0; i < live.size(); ++i) denom += lambda * std::exp(s_q[i] - hi);
    out.loss += -s_p + hi + std::log(denom);

    auto gx = out.grad_features.row(b);
    const double w_p = (e_p / denom - 1.0) / (tau_k * big_b);
    add_cosine_grad(x, norms[b], anchor, 1.0, cos_p_raw, w_p, gx);
    for (std::size_t i = 0; i < live.size(); ++i) {
      const std::size_t q = live[i];
      const auto y = f.row(q);
      const double w_q = lambda * std::exp(s_q[i] - hi) / denom / (batch.negative_temp * big_b);
      add_cosine_grad(x, norms[b], y, norms[q], cos_q[i], w_q, gx);
      add_cosine_grad(y, norms[q], x, norms[b], cos_q[i], w_q, out.grad_features.row(q));
    }
  }
  out.loss /= big_b;
  if (!std::isfinite(out.loss)) throw NumericError("bacon_loss: non-finite loss");
  return out;
}

void save_bank_csv(const FeatureBank& bank, const std::filesystem::path& path) {
  csv::Table t;
  t.header = {"key", "class"};
  for (std::size_t j = 0; j < bank.dim(); ++j) t.header.push_back("f" + std::to_string(j));
  for (const auto& [key, e] : bank.entries()) {
    std::vector<std::string> row{std::to_string(key), std::to_string(e.cls)};
    for (double v : e.feature) row.push_back(csv::format_double(v));
    t.rows.push_back(std::move(row));
  }
  csv::write(path, t);
}

FeatureBank load_bank_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  if (t.header.size() < 2) throw std::runtime_error("'" + path.string() + "': not a bank CSV");
  FeatureBank bank(t.header.size() - 2);
  for (const auto& row : t.rows) {
    std::vector<double> f(bank.dim());
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = csv::parse_double(row[j + 2]);
    bank.restore(static_cast<std::size_t>(csv::parse_int(row[0])), std::move(f),
                 static_cast<int>(csv::parse_int(row[1])));
  }
  return bank;
}

}  // namespace cissl
