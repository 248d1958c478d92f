#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace cissl {

// Dense row-major matrix of doubles. Every activation, parameter and gradient
// in the library is one of these.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2D from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor2D identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  void fill(double v) noexcept;
  bool all_finite() const noexcept;

  // Rows picked by index, in the given order.
  Tensor2D gather_rows(std::span<const std::size_t> indices) const;

  bool operator==(const Tensor2D&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a (n x k) * b (k x m)
Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);
// out (k x m) += a^T * b, with a (n x k) and b (n x m).
void matmul_at_b_accumulate(const Tensor2D& a, const Tensor2D& b, Tensor2D& out);
Tensor2D transpose(const Tensor2D& a);

// out[r, c] += bias[0, c] for every row.
void add_row_vector(Tensor2D& out, const Tensor2D& bias);
// out[0, c] += sum_r a[r, c]
void accumulate_column_sums(const Tensor2D& a, Tensor2D& out);

// Row-wise vertical stack; both inputs must share a column count (or be empty).
Tensor2D vstack(const Tensor2D& top, const Tensor2D& bottom);

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double l2_norm(std::span<const double> a) noexcept;

}  // namespace cissl
