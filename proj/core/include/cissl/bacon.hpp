#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cissl/tensor.hpp"

namespace cissl {

// Paired memory banks S_b (unit-norm projected features) and S_K (class
// assignments), keyed by dataset sample key. One map holds both so their
// domains cannot diverge.
class FeatureBank {
 public:
  struct Entry {
    std::vector<double> feature;
    int cls = 0;
    bool operator==(const Entry&) const = default;
  };

  FeatureBank() = default;
  explicit FeatureBank(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(std::size_t key) const { return entries_.contains(key); }
  const Entry& at(std::size_t key) const { return entries_.at(key); }
  const std::map<std::size_t, Entry>& entries() const noexcept { return entries_; }

  // Stores normalize(feature) under key, replacing any previous entry.
  void put(std::size_t key, std::span<const double> feature, int cls);
  // Stores the feature bit-for-bit; for reloading a saved bank whose rows are already unit norm.
  void restore(std::size_t key, std::vector<double> unit_feature, int cls);

  // Per-class entry counts (the S_K histogram).
  std::vector<std::size_t> class_counts(std::size_t num_classes) const;

  bool operator==(const FeatureBank&) const = default;

 private:
  std::size_t dim_ = 0;
  std::map<std::size_t, Entry> entries_;
};

// For each row whose max aux-head probability exceeds threshold, overwrites the
// bank entry for keys[i] with the normalized feature and class ground_truth[i]
// (when ground_truth is non-empty, i.e. labeled rows) or the aux-head argmax.
// Other rows leave the bank untouched.
void bank_update(FeatureBank& bank, std::span<const std::size_t> keys, const Tensor2D& features,
                 const Tensor2D& aux_probs, std::span<const int> ground_truth, double threshold);

struct AnchorSet {
  std::vector<std::optional<std::vector<double>>> anchors;
  std::vector<std::size_t> support;

  std::size_t num_classes() const noexcept { return anchors.size(); }
  bool has(std::size_t k) const noexcept { return k < anchors.size() && anchors[k].has_value(); }
};

// Anc_k = normalize(mean of class-k bank features); absent when the class has
// no entries (or the mean is the zero vector).
AnchorSet compute_anchors(const FeatureBank& bank, std::size_t num_classes);

// 1-based rank of class k in the row sorted by descending probability; equal
// probabilities rank the lower class index first.
std::size_t confidence_rank(std::span<const double> probs, std::size_t k) noexcept;

// Reliable negatives for class k over a batch whose first labels.size() rows
// are labeled. A labeled row qualifies iff its max aux probability exceeds
// tau_th and its label differs from k; an unlabeled row iff the rank of k in
// its own aux probability row exceeds top_n. Returns row indices, ascending.
std::vector<std::size_t> rns_negatives(std::size_t k, const Tensor2D& aux_probs,
                                       std::span<const int> labels, double tau_th,
                                       std::size_t top_n);

// Negatives without RNS: every row whose assigned class differs from k.
std::vector<std::size_t> other_class_negatives(std::size_t k, std::span<const int> assigned);

enum class BtaMode { off, naive, decay };

struct BtaSchedule {
  double temp_base = 0.1;
  double eta = 0.5;
  std::size_t total_iters = 1;
  BtaMode mode = BtaMode::decay;
};

// decay: tau * (1 - (1 - t/T)^2 * sqrt(N_c / N_max) * eta)
// naive: tau * (1 - sqrt(N_c / N_max) * eta)
// off:   tau
// Throws ConfigError unless 0 <= eta < 1, 0 <= t <= T, 0 < N_c <= N_max.
double bta_temperature(const BtaSchedule& sched, std::size_t t, double class_count,
                       double max_count);

// Per-class positive temperatures from bank counts; classes absent from the
// bank use N_c = 1, and N_max is at least 1.
std::vector<double> class_temperatures(const BtaSchedule& sched, std::size_t t,
                                       std::span<const std::size_t> bank_counts);

struct ContrastiveBatch {
  const Tensor2D* features = nullptr;          // one row per batch sample
  std::span<const int> assigned;               // class per row
  std::span<const std::uint8_t> participates;  // row joins the positive sum
  const AnchorSet* anchors = nullptr;
  const std::vector<std::vector<std::size_t>>* negatives = nullptr;  // row sets, per class
  std::span<const double> positive_temps;      // per class
  double negative_temp = 0.1;
};

struct BaconResult {
  double loss = 0.0;
  Tensor2D grad_features;
  std::size_t participating = 0;  // B
  std::size_t scored = 0;         // participating rows whose class has an anchor
};

// L = -(1/B) sum_k sum_{b in B_k} log( e^{s_bk/tau_k} /
//       (e^{s_bk/tau_k} + (B/|kbar|) sum_{q in kbar} e^{s_bq/tau}) )
// with s the cosine similarity. B counts every participating row, including
// those skipped for lacking an anchor. Anchors and the B/|kbar| weight are
// constants; gradient flows into f_b and into every negative f_q.
BaconResult bacon_loss(const ContrastiveBatch& batch);

// CSV with header key,class,f0..f{d-1}.
void save_bank_csv(const FeatureBank& bank, const std::filesystem::path& path);
FeatureBank load_bank_csv(const std::filesystem::path& path);

}  // namespace cissl
