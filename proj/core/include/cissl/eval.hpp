#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cissl/datagen.hpp"
#include "cissl/model.hpp"
#include "cissl/tensor.hpp"

namespace cissl {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

// confusion[true][predicted]. Throws std::invalid_argument on a label or
// prediction outside [0, K).
ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                 std::size_t num_classes);

// Row-wise recall. Throws std::invalid_argument when a class has no samples.
std::vector<double> per_class_recall(const ConfusionMatrix& confusion);

// Mean per-class recall; every class must appear in labels.
double balanced_accuracy(std::span<const int> preds, std::span<const int> labels,
                         std::size_t num_classes);

struct Dispersion {
  double intra = 0.0;  // mean squared distance of each row to its class mean
  double inter = 0.0;  // mean Euclidean distance over pairs of class means
  double ratio = 0.0;  // intra / inter (+inf when inter is 0 and intra is not)
};

// Needs at least two distinct classes among labels.
Dispersion dispersion_metrics(const Tensor2D& features, std::span<const int> labels);

// Argmax of the chosen head (kAuxHead or kBackboneHead); ties go to the lower class.
std::vector<int> predict(const CisslModel& model, const Tensor2D& x, Head head = kAuxHead);

struct EvalReport {
  double balanced_accuracy = 0.0;
  std::vector<double> per_class_recall;
  ConfusionMatrix confusion;
  double intra_class_var = 0.0;
  double inter_center_dist = 0.0;
  double dispersion_ratio = 0.0;
};

// Classification metrics from the chosen head plus dispersion of the
// unit-normalized contrastive features.
EvalReport evaluate(const CisslModel& model, const Tensor2D& x, std::span<const int> labels,
                    Head head = kAuxHead);

std::string report_json(const EvalReport& report);

// CSV sample_index,true_label,predicted_label,f0..f{d-1} over the test split;
// features are the raw projector outputs.
void export_features(const CisslModel& model, const LongTailDataset& ds,
                     const std::filesystem::path& path, Head head = kAuxHead);

struct FeatureExport {
  std::vector<std::size_t> sample_index;
  std::vector<int> true_label;
  std::vector<int> predicted_label;
  Tensor2D features;
};

FeatureExport read_feature_export(const std::filesystem::path& path);

}  // namespace cissl
