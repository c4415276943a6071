#include "perffl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace perffl {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> row_major)
    : rows_(rows), cols_(cols), data_(std::move(row_major)) {
  if (data_.size() != rows_ * cols_)
    throw ConfigError(fmt::format("DenseMatrix: {} entries for a {}x{} matrix", data_.size(), rows_, cols_));
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  DenseMatrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw ConfigError("DenseMatrix::from_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

DenseMatrix DenseMatrix::column(std::span<const double> v) {
  return DenseMatrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Vector DenseMatrix::col(std::size_t c) const {
  Vector v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

double DenseMatrix::frobenius_norm() const {
  double s = 0.0;
  for (double x : data_) s += x * x;
  return std::sqrt(s);
}

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

bool DenseMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Vector DenseMatrix::apply(std::span<const double> v) const {
  Vector out(rows_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = dot(row(r), v);
  return out;
}

Vector DenseMatrix::apply_transpose(std::span<const double> v) const {
  Vector out(cols_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) axpy(v[r], row(r), out);
  return out;
}

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols_ != b.rows_)
    throw ConfigError(fmt::format("matrix product: {}x{} times {}x{}", a.rows_, a.cols_, b.rows_, b.cols_));
  DenseMatrix c(a.rows_, b.cols_);
  for (std::size_t i = 0; i < a.rows_; ++i)
    for (std::size_t k = 0; k < a.cols_; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols_; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows_ != b.rows_ || a.cols_ != b.cols_) throw ConfigError("matrix difference: shape mismatch");
  DenseMatrix c = a;
  for (std::size_t i = 0; i < c.data_.size(); ++i) c.data_[i] -= b.data_[i];
  return c;
}

DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows_ != b.rows_ || a.cols_ != b.cols_) throw ConfigError("matrix sum: shape mismatch");
  DenseMatrix c = a;
  for (std::size_t i = 0; i < c.data_.size(); ++i) c.data_[i] += b.data_[i];
  return c;
}

DenseMatrix operator*(double s, const DenseMatrix& a) {
  DenseMatrix c = a;
  for (double& x : c.data_) x *= s;
  return c;
}

std::string DenseMatrix::to_string() const {
  std::string s = fmt::format("[{}x{}]", rows_, cols_);
  for (std::size_t r = 0; r < rows_ && r < 8; ++r) {
    s += "\n ";
    for (std::size_t c = 0; c < cols_ && c < 8; ++c) s += fmt::format(" {:.6g}", (*this)(r, c));
  }
  return s;
}

namespace {

/// Hestenes one-sided Jacobi on a tall matrix (m >= n). Columns are stored
/// contiguously so rotations stream through memory.
Svd jacobi_tall(const DenseMatrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  std::vector<double> w(m * n);  // column-major copy
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) w[c * m + r] = a(r, c);
  std::vector<double> v(n * n, 0.0);  // column-major
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  constexpr double kEps = 1e-15;
  constexpr int kMaxSweeps = 80;
  double fro2 = 0.0;
  for (double x : w) fro2 += x * x;
  // columns this small are numerically zero; rotating them only stirs roundoff
  const double negligible = 1e-30 * fro2;
  bool converged = n < 2;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* wp = &w[p * m];
        double* wq = &w[q * m];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
          alpha += wp[r] * wp[r];
          beta += wq[r] * wq[r];
          gamma += wp[r] * wq[r];
        }
        if (gamma == 0.0 || std::abs(gamma) <= kEps * std::sqrt(alpha * beta)) continue;
        if (alpha <= negligible || beta <= negligible) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t r = 0; r < m; ++r) {
          const double xp = wp[r], xq = wq[r];
          wp[r] = cs * xp - sn * xq;
          wq[r] = sn * xp + cs * xq;
        }
        double* vp = &v[p * n];
        double* vq = &v[q * n];
        for (std::size_t r = 0; r < n; ++r) {
          const double xp = vp[r], xq = vq[r];
          vp[r] = cs * xp - sn * xq;
          vq[r] = sn * xp + cs * xq;
        }
      }
    }
  }
  if (!converged)
    throw NumericError("SVD did not converge after " + std::to_string(kMaxSweeps) + " sweeps on " +
                       a.to_string());

  Vector sigma(n);
  for (std::size_t c = 0; c < n; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) s += w[c * m + r] * w[c * m + r];
    sigma[c] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

  Svd out{DenseMatrix(m, n), Vector(n), DenseMatrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t c = order[k];
    out.S[k] = sigma[c];
    for (std::size_t r = 0; r < m; ++r) out.U(r, k) = sigma[c] > 0.0 ? w[c * m + r] / sigma[c] : 0.0;
    for (std::size_t r = 0; r < n; ++r) out.V(r, k) = v[c * n + r];
  }
  return out;
}

}  // namespace

Svd svd(const DenseMatrix& a) {
  if (a.empty()) throw NumericError("svd of an empty matrix");
  if (!a.all_finite()) throw NumericError("svd of a non-finite matrix " + a.to_string());
  if (a.rows() >= a.cols()) return jacobi_tall(a);
  Svd t = jacobi_tall(a.transpose());
  return Svd{std::move(t.V), std::move(t.S), std::move(t.U)};
}

double default_rank_tol(const DenseMatrix& a) {
  return 1e-10 * static_cast<double>(std::max(a.rows(), a.cols()));
}

DenseMatrix pseudo_inverse(const DenseMatrix& a, double rank_tol) {
  const Svd d = svd(a);
  const double cutoff = rank_tol * (d.S.empty() ? 0.0 : d.S.front());
  // A^+ = V diag(1/s) U^T, shape cols x rows
  DenseMatrix pinv(a.cols(), a.rows());
  for (std::size_t k = 0; k < d.S.size(); ++k) {
    if (!(d.S[k] > cutoff)) continue;
    const double inv = 1.0 / d.S[k];
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double vik = d.V(i, k) * inv;
      if (vik == 0.0) continue;
      for (std::size_t j = 0; j < a.rows(); ++j) pinv(i, j) += vik * d.U(j, k);
    }
  }
  return pinv;
}

std::optional<Vector> top_right_singular_vector(const DenseMatrix& a) {
  if (a.cols() == 0) throw ConfigError("top_right_singular_vector: matrix has no columns");
  if (a.rows() == 0 || a.max_abs() == 0.0) return std::nullopt;
  Vector v;
  if (a.rows() >= a.cols()) {
    const Svd d = jacobi_tall(a);
    v = d.V.col(0);
  } else {
    v = svd(a).V.col(0);
  }
  const double nv = norm(v);
  for (double& x : v) x /= nv;
  for (double x : v) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0)
        for (double& y : v) y = -y;
      break;
    }
  }
  return v;
}

}  // namespace perffl
