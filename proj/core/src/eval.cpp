#include "cissl/eval.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cissl/csv.hpp"
#include "cissl/ops.hpp"

namespace cissl {

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                 std::size_t num_classes) {
  if (preds.size() != labels.size()) throw std::invalid_argument("confusion_matrix: length mismatch");
  ConfusionMatrix m(num_classes, std::vector<std::size_t>(num_classes, 0));
  const auto in_range = [&](int c) { return c >= 0 && static_cast<std::size_t>(c) < num_classes; };
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!in_range(preds[i]) || !in_range(labels[i])) {
      throw std::invalid_argument("confusion_matrix: class index out of range");
    }
    ++m[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  return m;
}

std::vector<double> per_class_recall(const ConfusionMatrix& confusion) {
  std::vector<double> out(confusion.size());
  for (std::size_t k = 0; k < confusion.size(); ++k) {
    std::size_t total = 0;
    for (auto c : confusion[k]) total += c;
    if (total == 0) {
      throw std::invalid_argument("per_class_recall: class " + std::to_string(k) + " has no samples");
    }
    out[k] = static_cast<double>(confusion[k][k]) / static_cast<double>(total);
  }
  return out;
}

double balanced_accuracy(std::span<const int> preds, std::span<const int> labels,
                         std::size_t num_classes) {
  const auto recall = per_class_recall(confusion_matrix(preds, labels, num_classes));
  double sum = 0.0;
  for (double r : recall) sum += r;
  return sum / static_cast<double>(num_classes);
}

Dispersion dispersion_metrics(const Tensor2D& features, std::span<const int> labels) {
  if (labels.size() != features.rows()) throw std::invalid_argument("dispersion_metrics: length mismatch");
  const std::size_t d = features.cols();
  std::map<int, std::vector<double>> means;
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& m = means[labels[i]];
    m.resize(d, 0.0);
    const auto row = features.row(i);
    for (std::size_t j = 0; j < d; ++j) m[j] += row[j];
    ++counts[labels[i]];
  }
  if (means.size() < 2) throw std::invalid_argument("dispersion_metrics: need at least two classes");
  for (auto& [c, m] : means) {
    for (auto& x : m) x /= static_cast<double>(counts[c]);
  }

  Dispersion out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& m = means[labels[i]];
    const auto row = features.row(i);
    for (std::size_t j = 0; j < d; ++j) out.intra += (row[j] - m[j]) * (row[j] - m[j]);
  }
  out.intra /= static_cast<double>(labels.size());

  std::size_t pairs = 0;
  for (auto a = means.begin(); a != means.end(); ++a) {
    for (auto b = std::next(a); b != means.end(); ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += (a->second[j] - b->second[j]) * (a->second[j] - b->second[j]);
      out.inter += std::sqrt(sq);
      ++pairs;
    }
  }
  out.inter /= static_cast<double>(pairs);
  if (out.inter > 0.0) {
    out.ratio = out.intra / out.inter;
  } else {
    out.ratio = out.intra > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  return out;
}

namespace {

std::vector<int> argmax_rows(const Tensor2D& probs) {
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = static_cast<int>(argmax(probs.row(i)));
  return out;
}

const Tensor2D& head_probs(const ForwardPass& pass, Head head) {
  return head == kBackboneHead ? pass.backbone_probs : pass.aux_probs;
}

void check_head(Head head) {
  if (head != kAuxHead && head != kBackboneHead) {
    throw std::invalid_argument("prediction head must be the aux or the backbone head");
  }
}

}  // namespace

std::vector<int> predict(const CisslModel& model, const Tensor2D& x, Head head) {
  check_head(head);
  return argmax_rows(head_probs(forward(model, x, head), head));
}

EvalReport evaluate(const CisslModel& model, const Tensor2D& x, std::span<const int> labels,
                    Head head) {
  check_head(head);
  const auto pass = forward(model, x, head | kProjection);
  const auto preds = argmax_rows(head_probs(pass, head));
  const std::size_t k = model.shape().num_classes;

  EvalReport r;
  r.confusion = confusion_matrix(preds, labels, k);
  r.per_class_recall = per_class_recall(r.confusion);
  for (double v : r.per_class_recall) r.balanced_accuracy += v;
  r.balanced_accuracy /= static_cast<double>(k);

  Tensor2D unit = pass.features;
  for (std::size_t i = 0; i < unit.rows(); ++i) normalize_in_place(unit.row(i));
  const auto disp = dispersion_metrics(unit, labels);
  r.intra_class_var = disp.intra;
  r.inter_center_dist = disp.inter;
  r.dispersion_ratio = disp.ratio;
  return r;
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["balanced_accuracy"] = report.balanced_accuracy;
  j["per_class_recall"] = report.per_class_recall;
  j["confusion"] = report.confusion;
  j["intra_class_var"] = report.intra_class_var;
  j["inter_center_dist"] = report.inter_center_dist;
  j["dispersion_ratio"] = std::isfinite(report.dispersion_ratio) ? nlohmann::ordered_json(report.dispersion_ratio)
                                                                  : nlohmann::ordered_json(nullptr);
  return j.dump(2);
}

void export_features(const CisslModel& model, const LongTailDataset& ds,
                     const std::filesystem::path& path, Head head) {
  check_head(head);
  const auto pass = forward(model, ds.test_features(), head | kProjection);
  const auto preds = argmax_rows(head_probs(pass, head));
  csv::Table t;
  t.header = {"sample_index", "true_label", "predicted_label"};
  for (std::size_t j = 0; j < pass.features.cols(); ++j) t.header.push_back("f" + std::to_string(j));
  for (std::size_t i = 0; i < pass.features.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i), std::to_string(ds.test_labels()[i]),
                                 std::to_string(preds[i])};
    for (double v : pass.features.row(i)) row.push_back(csv::format_double(v));
    t.rows.push_back(std::move(row));
  }
  csv::write(path, t);
}

FeatureExport read_feature_export(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  if (t.header.size() < 3 || t.header[0] != "sample_index") {
    throw std::runtime_error("'" + path.string() + "': not a feature export");
  }
  FeatureExport out;
  const std::size_t d = t.header.size() - 3;
  out.features = Tensor2D(t.rows.size(), d);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    out.sample_index.push_back(static_cast<std::size_t>(csv::parse_int(row[0])));
    out.true_label.push_back(static_cast<int>(csv::parse_int(row[1])));
    out.predicted_label.push_back(static_cast<int>(csv::parse_int(row[2])));
    for (std::size_t j = 0; j < d; ++j) out.features(i, j) = csv::parse_double(row[j + 3]);
  }
  return out;
}

}  // namespace cissl
