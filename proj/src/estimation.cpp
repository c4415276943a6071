#include "perffl/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace perffl {

HistoryWindow::HistoryWindow(std::size_t H) : H_(H) {
  if (H < 1) throw ConfigError("HistoryWindow: H must be >= 1");
}

void HistoryWindow::push(ModelVector theta, Vector f_hat) {
  if (!thetas_.empty() && (theta.size() != thetas_.back().size() || f_hat.size() != f_hats_.back().size()))
    throw ConfigError("HistoryWindow: entry dimensions changed");
  thetas_.push_back(std::move(theta));
  f_hats_.push_back(std::move(f_hat));
  if (thetas_.size() > H_ + 1) {
    thetas_.pop_front();
    f_hats_.pop_front();
  }
}

void HistoryWindow::clear() {
  thetas_.clear();
  f_hats_.clear();
}

Vector GradientEstimate::direction() const {
  Vector g = g1;
  if (g2) axpy(1.0, *g2, g);
  return g;
}

L1Estimate grad_l1(const SampleBatch& batch, std::span<const double> theta, const Environment& env) {
  if (batch.empty()) throw ConfigError("grad_l1: empty sample set");
  L1Estimate out{Vector(env.dim(), 0.0), 0.0};
  out.loss_mean = env.accumulate_gradients(batch, theta, out.g1);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& x : out.g1) x *= inv;
  out.loss_mean *= inv;
  return out;
}

DenseMatrix per_sample_gradients(const SampleBatch& batch, std::span<const double> theta, const Environment& env) {
  DenseMatrix g(batch.size(), env.dim());
  for (std::size_t j = 0; j < batch.size(); ++j) env.gradient(batch.z(j), theta, g.row(j));
  return g;
}

namespace {

DenseMatrix delta_matrix(const HistoryWindow& w, bool use_f) {
  const std::size_t H = w.size() - 1;
  const Vector& cur = use_f ? w.f_hat(H) : w.theta(H);
  DenseMatrix m(cur.size(), H);
  for (std::size_t k = 0; k < H; ++k) {
    const Vector& past = use_f ? w.f_hat(k) : w.theta(k);
    for (std::size_t r = 0; r < cur.size(); ++r) m(r, k) = past[r] - cur[r];
  }
  return m;
}

}  // namespace

DenseMatrix delta_theta(const HistoryWindow& window) {
  if (window.size() < 2) throw RunError("delta_theta: window needs at least two entries");
  return delta_matrix(window, false);
}

JacobianEstimate fd_jacobian(const HistoryWindow& window, double rank_tol) {
  if (!window.full())
    throw RunError(fmt::format("fd_jacobian: window has {} of {} entries", window.size(), window.H() + 1));
  const DenseMatrix dtheta = delta_matrix(window, false);
  const DenseMatrix df = delta_matrix(window, true);
  JacobianEstimate est;
  est.matrix = DenseMatrix(df.rows(), dtheta.rows());
  if (dtheta.max_abs() == 0.0) {
    est.degenerate = true;
    est.warning = "identical history points; zero Jacobian";
    return est;
  }
  if (!df.all_finite()) throw NumericError("fd_jacobian: non-finite f_hat in history");
  const double tol = rank_tol > 0.0 ? rank_tol : default_rank_tol(dtheta);
  const Svd d = svd(dtheta);
  const double cutoff = tol * d.S.front();
  double smin = 0.0;
  for (double s : d.S)
    if (s > cutoff) smin = s;
  est.min_singular_value = smin;
  if (d.S.back() <= cutoff) {
    est.rank_deficient = true;
    est.warning = fmt::format("Delta theta is numerically rank deficient (sigma_min {:.3g}, sigma_max {:.3g})",
                              d.S.back(), d.S.front());
  }
  est.matrix = df * pseudo_inverse(dtheta, tol);
  return est;
}

Vector grad_l2(const SampleBatch& batch, std::span<const double> theta, const Environment& env,
               const DenseMatrix& jac, std::span<const double> f_hat, std::size_t* skipped) {
  if (batch.empty()) throw ConfigError("grad_l2: empty sample set");
  if (jac.rows() != env.f_dim() || jac.cols() != env.dim())
    throw ConfigError(fmt::format("grad_l2: Jacobian is {}x{}, environment needs {}x{}", jac.rows(), jac.cols(),
                                  env.f_dim(), env.dim()));
  if (f_hat.size() != env.f_dim()) throw ConfigError("grad_l2: f_hat dimension mismatch");
  Vector w(env.f_dim(), 0.0);
  const std::size_t used = env.accumulate_loss_scores(batch, theta, f_hat, w);
  if (skipped) *skipped = batch.size() - used;
  if (used == 0) return Vector(env.dim(), 0.0);
  for (double& x : w) x /= static_cast<double>(used);
  return jac.apply_transpose(w);
}

Vector outlier_scores(const DenseMatrix& grads) {
  const std::size_t n = grads.rows(), d = grads.cols();
  Vector mean(d, 0.0);
  for (std::size_t j = 0; j < n; ++j) axpy(1.0, grads.row(j), mean);
  for (double& x : mean) x /= static_cast<double>(n);
  DenseMatrix centered(n, d);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) centered(j, c) = grads(j, c) - mean[c];
  Vector tau(n, 0.0);
  const auto v = top_right_singular_vector(centered);
  if (!v) return tau;
  for (std::size_t j = 0; j < n; ++j) {
    const double p = dot(centered.row(j), *v);
    tau[j] = p * p;
  }
  return tau;
}

std::vector<std::size_t> robust_filter_rows(const DenseMatrix& grads, double C, double J, std::size_t B,
                                            std::size_t* passes) {
  if (!(C > 0.0 && C < 1.0) || !(J > 0.0 && J < 1.0) || B < 2)
    throw ConfigError("robust_gradient: need C, J in (0, 1) and B >= 2");
  const std::size_t n = grads.rows(), d = grads.cols();
  std::vector<std::size_t> S(n);
  for (std::size_t j = 0; j < n; ++j) S[j] = j;
  if (passes) *passes = 0;
  if (n < 2) return S;
  const std::size_t floor_size = (n + 1) / 2;

  auto mean_of = [&](const std::vector<std::size_t>& idx) {
    Vector m(d, 0.0);
    for (std::size_t j : idx) axpy(1.0, grads.row(j), m);
    for (double& x : m) x /= static_cast<double>(idx.size());
    return m;
  };

  Vector mean = mean_of(S);
  while (S.size() >= 2) {
    if (passes) ++*passes;
    DenseMatrix sub(S.size(), d);
    for (std::size_t r = 0; r < S.size(); ++r) {
      const auto src = grads.row(S[r]);
      std::copy(src.begin(), src.end(), sub.row(r).begin());
    }
    const Vector tau = outlier_scores(sub);
    const double tau_max = *std::max_element(tau.begin(), tau.end());
    if (tau_max < 1e-12) break;

    const double width = tau_max / static_cast<double>(B);
    std::vector<std::size_t> counts(B, 0);
    for (double t : tau) counts[std::min(static_cast<std::size_t>(t / width), B - 1)] += 1;
    const double min_count = C * static_cast<double>(S.size());
    std::optional<std::size_t> bin;
    for (std::size_t b = 0; b < B; ++b) {
      if (static_cast<double>(counts[b]) < min_count) {
        bin = b;
        break;
      }
    }
    if (!bin) break;
    const double threshold = static_cast<double>(*bin) * width;

    std::vector<std::size_t> kept;
    kept.reserve(S.size());
    for (std::size_t r = 0; r < S.size(); ++r)
      if (tau[r] < threshold) kept.push_back(S[r]);
    if (kept.empty() || kept.size() == S.size()) break;
    if (kept.size() < floor_size) break;

    const Vector next = mean_of(kept);
    Vector diff = next;
    axpy(-1.0, mean, diff);
    const double base = norm(mean);
    const double change = base > 0.0 ? norm(diff) / base : norm(diff);
    S = std::move(kept);
    mean = next;
    if (change < J || 2 * S.size() <= n) break;
  }
  return S;
}

RobustResult robust_gradient(const SampleBatch& batch, std::span<const double> theta, const Environment& env,
                             double C, double J, std::size_t B) {
  const DenseMatrix grads = per_sample_gradients(batch, theta, env);
  RobustResult out;
  out.kept = robust_filter_rows(grads, C, J, B, &out.passes);
  out.clean = batch.subset(out.kept);
  out.removed = batch.size() - out.kept.size();
  if (out.clean.empty()) throw RunError("robust_gradient: empty sample set");
  out.g1.assign(env.dim(), 0.0);
  for (std::size_t j : out.kept) {
    axpy(1.0, grads.row(j), out.g1);
    out.loss_mean += env.loss(batch.z(j), theta);
  }
  const double inv = 1.0 / static_cast<double>(out.kept.size());
  for (double& x : out.g1) x *= inv;
  out.loss_mean *= inv;
  return out;
}

void AdaptiveSizerState::observe(double loss_mean, double max_grad_norm, double sample_variance,
                                 const JacobianEstimate& jac, std::span<const double> theta) {
  ell_max = std::abs(loss_mean);
  G_hat = max_grad_norm;
  sigma2_hat = sample_variance;
  if (!jac.usable()) return;
  F_hat = jac.matrix.frobenius_norm();
  if (last_jacobian && last_theta) {
    Vector step(theta.begin(), theta.end());
    axpy(-1.0, *last_theta, step);
    const double h = norm(step);
    if (h > 0.0) M_hat = (jac.matrix - *last_jacobian).frobenius_norm() / h;
  }
  last_jacobian = jac.matrix;
  last_theta = ModelVector(theta.begin(), theta.end());
}

double adaptive_sample_size_raw(const AdaptiveSizerState& s, std::size_t H, double eta, double delta_theta_norm) {
  const double Hd = static_cast<double>(H);
  const double l2 = s.ell_max * s.ell_max;
  const double dt2 = delta_theta_norm * delta_theta_norm;
  const double numer =
      2.0 * (2.0 * l2 * Hd / dt2 + s.F_hat * s.F_hat) * s.sigma2_hat * std::log(2.0 / s.phi);
  const double denom = 2.0 * s.Phi - s.M_hat * s.M_hat * eta * eta * std::pow(s.G_hat, 4) * std::pow(Hd, 6) * dt2 * l2;
  if (!(denom > 0.0) || !std::isfinite(numer)) return std::numeric_limits<double>::infinity();
  return numer / denom;
}

std::size_t adaptive_sample_size(const AdaptiveSizerState& s, std::size_t H, double eta, double delta_theta_norm) {
  const double raw = adaptive_sample_size_raw(s, H, eta, delta_theta_norm);
  if (!std::isfinite(raw)) return s.n_max;
  const double n = std::ceil(raw);
  if (n <= static_cast<double>(s.n_min)) return s.n_min;
  if (n >= static_cast<double>(s.n_max)) return s.n_max;
  return static_cast<std::size_t>(n);
}

JacobianEstimate server_jacobian(std::span<const HistoryWindow* const> windows, double rank_tol) {
  if (windows.empty()) throw ConfigError("server_jacobian: empty cluster");
  const HistoryWindow& first = *windows.front();
  if (!first.full()) throw RunError("server_jacobian: window not full");
  HistoryWindow avg(first.H());
  for (std::size_t k = 0; k < first.size(); ++k) {
    ModelVector theta(first.theta(k).size(), 0.0);
    Vector f(first.f_hat(k).size(), 0.0);
    for (const HistoryWindow* w : windows) {
      if (w->H() != first.H() || !w->full()) throw RunError("server_jacobian: windows differ in length");
      if (w->theta(k).size() != theta.size() || w->f_hat(k).size() != f.size())
        throw ConfigError("server_jacobian: clients in a cluster have mixed dimensions");
      axpy(1.0, w->theta(k), theta);
      axpy(1.0, w->f_hat(k), f);
    }
    const double inv = 1.0 / static_cast<double>(windows.size());
    for (double& x : theta) x *= inv;
    for (double& x : f) x *= inv;
    avg.push(std::move(theta), std::move(f));
  }
  JacobianEstimate est = fd_jacobian(avg, rank_tol);
  est.source = JacobianSource::ServerCluster;
  return est;
}

}  // namespace perffl
