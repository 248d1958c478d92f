#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cissl/rng.hpp"
#include "cissl/tensor.hpp"

namespace cissl {

// Per-class sizes round-half-up(N1 * gamma^(-(k-1)/(K-1))), floor 1, k = 1..K.
// Throws ConfigError when gamma < 1, n1 < gamma, or K < 2.
std::vector<std::size_t> longtail_counts(std::size_t n1, double gamma, std::size_t num_classes);

struct LongTailSpec {
  std::size_t num_classes = 6;
  std::size_t n1_labeled = 100;
  std::size_t n1_unlabeled = 900;
  double gamma_labeled = 50.0;
  double gamma_unlabeled = 50.0;
  // Reverse the unlabeled class order, giving gamma_L = 1 / gamma_U.
  bool invert_unlabeled = false;
  std::size_t input_dim = 16;
  double class_sep = 2.0;
  double noise_sigma = 1.0;
  std::size_t test_per_class = 200;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const LongTailSpec&) const = default;
};

struct AugmentConfig {
  double weak_sigma_scale = 0.05;   // sigma_w = scale * noise_sigma
  double strong_sigma_scale = 0.25; // sigma_s = scale * noise_sigma
  double mask_prob = 0.2;
  bool operator==(const AugmentConfig&) const = default;
};

// Labeled, unlabeled and balanced test splits drawn from K Gaussian blobs.
//
// Sample keys: labeled row i has key i, unlabeled row j has key
// num_labeled() + j. Keys are what FeatureBank is indexed by.
//
// The ground-truth labels of the unlabeled split exist for diagnostics only;
// they are reachable solely through diagnostic_unlabeled_labels(), which the
// training path never calls.
class LongTailDataset {
 public:
  LongTailDataset() = default;
  LongTailDataset(LongTailSpec spec, Tensor2D class_centers, Tensor2D labeled_features,
                  std::vector<int> labeled_labels, Tensor2D unlabeled_features,
                  std::vector<int> hidden_unlabeled_labels, Tensor2D test_features,
                  std::vector<int> test_labels);

  const LongTailSpec& spec() const noexcept { return spec_; }
  std::size_t num_classes() const noexcept { return spec_.num_classes; }
  std::size_t input_dim() const noexcept { return spec_.input_dim; }

  const Tensor2D& labeled_features() const noexcept { return labeled_x_; }
  const std::vector<int>& labeled_labels() const noexcept { return labeled_y_; }
  const Tensor2D& unlabeled_features() const noexcept { return unlabeled_x_; }
  const Tensor2D& test_features() const noexcept { return test_x_; }
  const std::vector<int>& test_labels() const noexcept { return test_y_; }
  const Tensor2D& class_centers() const noexcept { return centers_; }

  std::size_t num_labeled() const noexcept { return labeled_x_.rows(); }
  std::size_t num_unlabeled() const noexcept { return unlabeled_x_.rows(); }
  std::size_t num_keys() const noexcept { return num_labeled() + num_unlabeled(); }

  const std::vector<std::size_t>& counts_labeled() const noexcept { return counts_labeled_; }
  const std::vector<std::size_t>& counts_unlabeled() const noexcept { return counts_unlabeled_; }

  const std::vector<int>& diagnostic_unlabeled_labels() const noexcept { return unlabeled_y_; }

  bool operator==(const LongTailDataset&) const = default;

 private:
  LongTailSpec spec_;
  Tensor2D centers_;
  Tensor2D labeled_x_;
  std::vector<int> labeled_y_;
  Tensor2D unlabeled_x_;
  std::vector<int> unlabeled_y_;
  Tensor2D test_x_;
  std::vector<int> test_y_;
  std::vector<std::size_t> counts_labeled_;
  std::vector<std::size_t> counts_unlabeled_;
};

// Class centers: class_sep times the vertices of a regular simplex with unit
// circumradius, embedded in the first K-1 coordinates. Depends only on
// (K, d, class_sep). When d < K-1 the centers fall back to unit directions from
// a generator seeded by (K, d), and a warning is printed.
Tensor2D simplex_centers(std::size_t num_classes, std::size_t input_dim, double class_sep);

LongTailDataset make_dataset(const LongTailSpec& spec);

// Explicit per-class sizes instead of the long-tail formula. Same centers,
// noise and test split construction as make_dataset.
LongTailDataset make_dataset_with_counts(const LongTailSpec& spec,
                                         const std::vector<std::size_t>& counts_labeled,
                                         const std::vector<std::size_t>& counts_unlabeled);

// Balanced dataset with exactly the same labeled and unlabeled totals as
// make_dataset(spec): total / K per class, remainder spread over the first
// classes. Samples come from an independent stream of spec.seed.
LongTailDataset make_balanced_counterpart(const LongTailSpec& spec);

enum class AugmentMode { weak, strong };

// weak:   x + N(0, sigma_w^2)
// strong: x + N(0, sigma_s^2), then each coordinate zeroed with probability mask_prob
std::vector<double> augment(std::span<const double> x, AugmentMode mode, double noise_sigma,
                            const AugmentConfig& cfg, Rng& rng);
Tensor2D augment_rows(const Tensor2D& x, AugmentMode mode, double noise_sigma,
                      const AugmentConfig& cfg, Rng& rng);

struct BatchIndices {
  std::vector<std::size_t> labeled;    // row indices into the labeled split
  std::vector<std::size_t> unlabeled;  // row indices into the unlabeled split
  std::vector<std::size_t> labeled_keys;
  std::vector<std::size_t> unlabeled_keys;
};

// Uniform with replacement: batch_labeled labeled rows, then
// batch_labeled * uratio unlabeled rows.
BatchIndices sample_batch(const LongTailDataset& ds, std::size_t batch_labeled,
                          std::size_t uratio, Rng& rng);

// Directory of labeled.csv, unlabeled.csv, test.csv (columns index,label,x0..)
// plus meta.json with the spec, counts and centers.
void export_dataset(const LongTailDataset& ds, const std::filesystem::path& dir);
LongTailDataset import_dataset(const std::filesystem::path& dir);

}  // namespace cissl
