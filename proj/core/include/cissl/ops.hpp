#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cissl/tensor.hpp"

namespace cissl {

inline constexpr double kProbabilityFloor = 1e-12;

// Max-shifted softmax of one row. Throws NumericError on non-finite input.
std::vector<double> softmax(std::span<const double> logits);
Tensor2D softmax_rows(const Tensor2D& logits);

// -log(pred[target]) with pred floored at kProbabilityFloor.
double cross_entropy(std::span<const double> pred, std::size_t target);
// -sum_i target_i * log(pred_i), same floor.
double cross_entropy(std::span<const double> pred, std::span<const double> target);

// Number of times any cross_entropy call hit the probability floor in this
// process. Trainers poll this to log the event instead of logging per call.
std::uint64_t cross_entropy_floor_hits() noexcept;

// <a, b> / (|a| |b|), clamped to [-1, 1]. Throws std::invalid_argument on a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> v) noexcept;

// Rescales v to unit L2 norm in place; returns the original norm.
double normalize_in_place(std::span<double> v) noexcept;

}  // namespace cissl
