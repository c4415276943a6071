#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perffl/core.hpp"

namespace perffl {

/// Row-major dense matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> row_major);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix from_rows(const std::vector<Vector>& rows);
  static DenseMatrix column(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  DenseMatrix transpose() const;
  Vector col(std::size_t c) const;
  double frobenius_norm() const;
  double max_abs() const;
  bool all_finite() const;

  /// this * v
  Vector apply(std::span<const double> v) const;
  /// this^T * v
  Vector apply_transpose(std::span<const double> v) const;

  friend DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b);
  friend DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b);
  friend DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b);
  friend DenseMatrix operator*(double s, const DenseMatrix& a);
  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

  std::string to_string() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Thin SVD: A (m x n) = U diag(S) V^T with k = min(m, n) singular values in
/// descending order. U is m x k, V is n x k.
struct Svd {
  DenseMatrix U;
  Vector S;
  DenseMatrix V;
};

/// One-sided Jacobi SVD. Throws NumericError if the sweeps do not converge.
Svd svd(const DenseMatrix& a);

/// Default relative rank tolerance: 1e-10 * max(rows, cols).
double default_rank_tol(const DenseMatrix& a);

/// Moore-Penrose pseudo-inverse. Singular values <= rank_tol * sigma_max are
/// treated as zero.
DenseMatrix pseudo_inverse(const DenseMatrix& a, double rank_tol);
inline DenseMatrix pseudo_inverse(const DenseMatrix& a) { return pseudo_inverse(a, default_rank_tol(a)); }

/// Unit right singular vector of the largest singular value, first nonzero
/// entry positive. Ties go to the lowest-index direction. nullopt when A is
/// all zeros.
std::optional<Vector> top_right_singular_vector(const DenseMatrix& a);

}  // namespace perffl
