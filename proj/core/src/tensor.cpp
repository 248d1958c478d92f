#include "cissl/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cissl {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor2D& a, const Tensor2D& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                              "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                              "x" + std::to_string(b.cols()) + ")");
}

}  // namespace

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Tensor2D: data length " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows_) + "x" +
                                std::to_string(cols_));
  }
}

Tensor2D Tensor2D::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(n * m);
  for (const auto& r : rows) {
    if (r.size() != m) throw std::invalid_argument("Tensor2D::from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor2D(n, m, std::move(data));
}

Tensor2D Tensor2D::identity(std::size_t n) {
  Tensor2D t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

void Tensor2D::fill(double v) noexcept {
  for (auto& x : data_) x = v;
}

bool Tensor2D::all_finite() const noexcept {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor2D Tensor2D::gather_rows(std::span<const std::size_t> indices) const {
  Tensor2D out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw std::out_of_range("Tensor2D::gather_rows: row index out of range");
    const auto src = row(indices[i]);
    auto dst = out.row(i);
    for (std::size_t c = 0; c < cols_; ++c) dst[c] = src[c];
  }
  return out;
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor2D out(n, m);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  // i-k-j order keeps the inner loop contiguous in both b and out.
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

void matmul_at_b_accumulate(const Tensor2D& a, const Tensor2D& b, Tensor2D& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    shape_error("matmul_at_b", a, b);
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    const double* brow = pb + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* orow = po + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

Tensor2D transpose(const Tensor2D& a) {
  Tensor2D out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  }
  return out;
}

void add_row_vector(Tensor2D& out, const Tensor2D& bias) {
  if (bias.rows() != 1 || bias.cols() != out.cols()) shape_error("add_row_vector", out, bias);
  const auto b = bias.row(0);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += b[c];
  }
}

void accumulate_column_sums(const Tensor2D& a, Tensor2D& out) {
  if (out.rows() != 1 || out.cols() != a.cols()) shape_error("accumulate_column_sums", a, out);
  auto o = out.row(0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto x = a.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += x[c];
  }
}

Tensor2D vstack(const Tensor2D& top, const Tensor2D& bottom) {
  if (top.empty() && top.rows() == 0) return bottom;
  if (bottom.empty() && bottom.rows() == 0) return top;
  if (top.cols() != bottom.cols()) shape_error("vstack", top, bottom);
  std::vector<double> data;
  data.reserve(top.size() + bottom.size());
  data.insert(data.end(), top.values().begin(), top.values().end());
  data.insert(data.end(), bottom.values().begin(), bottom.values().end());
  return Tensor2D(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

}  // namespace cissl
