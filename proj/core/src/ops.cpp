#include "cissl/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#include "cissl/errors.hpp"

namespace cissl {

namespace {

std::atomic<std::uint64_t> g_floor_hits{0};

double floored_log(double p) {
  if (p < kProbabilityFloor) {
    g_floor_hits.fetch_add(1, std::memory_order_relaxed);
    p = kProbabilityFloor;
  }
  return std::log(p);
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double hi = logits[0];
  for (double x : logits) {
    if (!std::isfinite(x)) throw NumericError("softmax: non-finite logit");
    hi = std::max(hi, x);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - hi);
    z += out[i];
  }
  for (auto& p : out) p /= z;
  return out;
}

Tensor2D softmax_rows(const Tensor2D& logits) {
  Tensor2D out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

double cross_entropy(std::span<const double> pred, std::size_t target) {
  if (target >= pred.size()) throw std::out_of_range("cross_entropy: target class out of range");
  return -floored_log(pred[target]);
}

double cross_entropy(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("cross_entropy: size mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] != 0.0) loss -= target[i] * floored_log(pred[i]);
  }
  return loss;
}

std::uint64_t cross_entropy_floor_hits() noexcept {
  return g_floor_hits.load(std::memory_order_relaxed);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: size mismatch");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

std::size_t argmax(std::span<const double> v) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

double normalize_in_place(std::span<double> v) noexcept {
  const double n = l2_norm(v);
  if (n > 0.0) {
    for (auto& x : v) x /= n;
  }
  return n;
}

}  // namespace cissl
