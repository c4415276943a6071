#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perffl/core.hpp"
#include "perffl/environments.hpp"
#include "perffl/linalg.hpp"

namespace perffl {

/// The H most recent (theta, f_hat) pairs plus the current one, oldest first.
class HistoryWindow {
 public:
  explicit HistoryWindow(std::size_t H = 1);

  std::size_t H() const { return H_; }
  std::size_t size() const { return thetas_.size(); }
  bool full() const { return thetas_.size() == H_ + 1; }
  bool empty() const { return thetas_.empty(); }

  /// Appends the current pair, evicting the oldest when full.
  void push(ModelVector theta, Vector f_hat);
  void clear();

  /// k = 0 is the oldest entry, size() - 1 the current one.
  const ModelVector& theta(std::size_t k) const { return thetas_[k]; }
  const Vector& f_hat(std::size_t k) const { return f_hats_[k]; }
  const ModelVector& current_theta() const { return thetas_.back(); }

 private:
  std::size_t H_;
  std::deque<ModelVector> thetas_;
  std::deque<Vector> f_hats_;
};

enum class JacobianSource { Local, ServerCluster };

struct JacobianEstimate {
  DenseMatrix matrix;  // f_dim x d
  double min_singular_value = 0.0;
  JacobianSource source = JacobianSource::Local;
  bool rank_deficient = false;
  bool degenerate = false;  // identical history points; matrix is zero
  std::string warning;

  /// False when the update should fall back to the first gradient term.
  bool usable() const { return !rank_deficient && !degenerate; }
};

struct GradientEstimate {
  Vector g1;
  std::optional<Vector> g2;
  double loss_mean = 0.0;
  std::size_t n_used = 0;
  std::size_t n_removed = 0;

  /// g1 + g2, with g2 treated as zero when absent.
  Vector direction() const;
};

struct L1Estimate {
  Vector g1;
  double loss_mean = 0.0;
};

/// Mean per-sample gradient and mean loss.
L1Estimate grad_l1(const SampleBatch& batch, std::span<const double> theta, const Environment& env);

/// Per-sample gradients as an n x d matrix.
DenseMatrix per_sample_gradients(const SampleBatch& batch, std::span<const double> theta, const Environment& env);

/// [theta^{t-H} - theta^t, ..., theta^{t-1} - theta^t] (d x H).
DenseMatrix delta_theta(const HistoryWindow& window);

/// Delta f (Delta theta)^+ from a full window. rank_tol <= 0 selects the
/// default relative tolerance.
JacobianEstimate fd_jacobian(const HistoryWindow& window, double rank_tol = 0.0);

/// (1/n) sum_j loss(z_j) jac^T score(z_j, f_hat), over samples with nonzero
/// density under f_hat. `skipped` receives the number of excluded samples.
Vector grad_l2(const SampleBatch& batch, std::span<const double> theta, const Environment& env,
               const DenseMatrix& jac, std::span<const double> f_hat, std::size_t* skipped = nullptr);

struct RobustResult {
  SampleBatch clean;
  std::vector<std::size_t> kept;  // indices into the input batch, ascending
  Vector g1;
  double loss_mean = 0.0;
  std::size_t removed = 0;
  std::size_t passes = 0;
};

/// Iterative SVD outlier filter on per-sample gradients.
RobustResult robust_gradient(const SampleBatch& batch, std::span<const double> theta, const Environment& env,
                             double C, double J, std::size_t B);

/// The core of robust_gradient on a precomputed n x d gradient matrix.
/// Returns the kept row indices.
std::vector<std::size_t> robust_filter_rows(const DenseMatrix& grads, double C, double J, std::size_t B,
                                            std::size_t* passes = nullptr);

/// Outlier scores tau_j = ((g_j - mean)^T v)^2 along the top singular direction
/// of the centered rows. All zeros when the rows do not vary.
Vector outlier_scores(const DenseMatrix& grads);

struct AdaptiveSizerState {
  double ell_max = 0.0;
  double F_hat = 0.0;
  double G_hat = 0.0;
  double M_hat = 0.0;
  double sigma2_hat = 0.0;
  double phi = 0.05;
  double Phi = 0.05;
  std::size_t n_min = 50;
  std::size_t n_max = 1000;
  std::optional<DenseMatrix> last_jacobian;
  std::optional<ModelVector> last_theta;

  /// Refreshes the running proxies after an iteration.
  void observe(double loss_mean, double max_grad_norm, double sample_variance, const JacobianEstimate& jac,
               std::span<const double> theta);
};

/// The unclamped sample-size bound; +inf when the denominator is not positive.
double adaptive_sample_size_raw(const AdaptiveSizerState& s, std::size_t H, double eta, double delta_theta_norm);

/// clamp(ceil(bound), n_min, n_max); n_max when the bound is unattainable.
std::size_t adaptive_sample_size(const AdaptiveSizerState& s, std::size_t H, double eta, double delta_theta_norm);

/// Slot-wise average of the cluster's windows followed by fd_jacobian.
JacobianEstimate server_jacobian(std::span<const HistoryWindow* const> windows, double rank_tol = 0.0);

}  // namespace perffl
