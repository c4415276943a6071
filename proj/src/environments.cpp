#include "perffl/environments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace perffl {

// SampleBatch ---------------------------------------------------------------

void SampleBatch::reserve(std::size_t n) {
  values_.reserve(n * width_);
  group_.reserve(n);
  contaminant_.reserve(n);
}

void SampleBatch::clear() {
  values_.clear();
  group_.clear();
  contaminant_.clear();
}

void SampleBatch::append(std::span<const double> z, int group, bool contaminant) {
  if (z.size() != width_)
    throw ConfigError(fmt::format("SampleBatch: sample of width {} appended to batch of width {}", z.size(), width_));
  values_.insert(values_.end(), z.begin(), z.end());
  group_.push_back(group);
  contaminant_.push_back(contaminant ? 1 : 0);
}

std::span<double> SampleBatch::extend(std::size_t n, int group) {
  const std::size_t old = values_.size();
  values_.resize(old + n * width_);
  group_.resize(group_.size() + n, group);
  contaminant_.resize(contaminant_.size() + n, 0);
  return {values_.data() + old, n * width_};
}

SampleBatch SampleBatch::subset(std::span<const std::size_t> indices) const {
  SampleBatch out(width_);
  out.reserve(indices.size());
  for (std::size_t j : indices) out.append(z(j), group_[j], contaminant_[j] != 0);
  return out;
}

std::size_t ContaminationOracle::count(const SampleBatch& batch) {
  return static_cast<std::size_t>(std::count(batch.contaminant_.begin(), batch.contaminant_.end(), 1));
}

// Environment defaults ------------------------------------------------------

void Environment::draw_clean(std::span<const double> theta, std::size_t n, Rng& rng, SampleBatch& out) const {
  Vector z(sample_width());
  out.reserve(out.size() + n);
  for (std::size_t j = 0; j < n; ++j) {
    int group = -1;
    draw(theta, rng, z, group);
    out.append(z, group);
  }
}

double Environment::accumulate_gradients(const SampleBatch& batch, std::span<const double> theta,
                                         std::span<double> grad_sum) const {
  Vector g(dim());
  double loss_sum = 0.0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    gradient(batch.z(j), theta, g);
    axpy(1.0, g, grad_sum);
    loss_sum += loss(batch.z(j), theta);
  }
  return loss_sum;
}

std::size_t Environment::accumulate_loss_scores(const SampleBatch& batch, std::span<const double> theta,
                                                std::span<const double> f_hat, std::span<double> out) const {
  Vector s(f_dim());
  std::size_t used = 0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (!score(batch.z(j), batch.group(j), f_hat, s)) continue;
    axpy(loss(batch.z(j), theta), s, out);
    ++used;
  }
  return used;
}

Vector Environment::estimate_f_hat(const SampleBatch& batch) const {
  if (dynamics() == Dynamics::Contribution) {
    Vector freq(num_groups(), 0.0);
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const int g = batch.group(j);
      if (g < 0 || static_cast<std::size_t>(g) >= freq.size())
        throw ConfigError(fmt::format("estimate_f_hat: sample {} has no valid group label", j));
      freq[static_cast<std::size_t>(g)] += 1.0;
    }
    for (double& x : freq) x /= static_cast<double>(batch.size());
    return freq;
  }
  Vector mean(batch.width(), 0.0);
  for (std::size_t j = 0; j < batch.size(); ++j) axpy(1.0, batch.z(j), mean);
  for (double& x : mean) x /= static_cast<double>(batch.size());
  return mean;
}

double Environment::sample_variance(const SampleBatch& batch) const {
  if (batch.size() < 2) return 0.0;
  const auto label = label_index();
  double total = 0.0;
  std::size_t cols = 0;
  for (std::size_t c = 0; c < batch.width(); ++c) {
    if (label && *label == c) continue;
    double mean = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) mean += batch.z(j)[c];
    mean /= static_cast<double>(batch.size());
    double ss = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) ss += (batch.z(j)[c] - mean) * (batch.z(j)[c] - mean);
    total += ss / static_cast<double>(batch.size() - 1);
    ++cols;
  }
  return cols ? total / static_cast<double>(cols) : 0.0;
}

void GaussianContaminant::draw(const Environment& env, Rng& rng, std::span<double> z, int& group) const {
  for (double& x : z) x = rng.normal(mean_, std_);
  if (const auto label = env.label_index()) z[*label] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  group = env.num_groups() > 0 ? static_cast<int>(rng.below(env.num_groups())) : -1;
}

namespace {

void check_theta(const Environment& env, std::span<const double> theta) {
  if (theta.size() != env.dim())
    throw ConfigError(fmt::format("{}: theta has length {}, expected {}", env.describe(), theta.size(), env.dim()));
}

double sigmoid(double u) {
  return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}

/// log(1 + exp(u)) without overflow.
double softplus(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }

/// Index drawn from a probability vector.
std::size_t draw_category(std::span<const double> p, Rng& rng) {
  double u = rng.uniform();
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    if (u < p[k]) return k;
    u -= p[k];
  }
  return p.size() - 1;
}

/// entry k = exp(lp_k) / sum_k' nu_k' exp(lp_k'), evaluated in log space.
bool mixture_score(std::span<const double> log_p, std::span<const double> nu_hat, std::span<double> out) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_p) m = std::max(m, v);
  if (!std::isfinite(m)) return false;
  double denom = 0.0;
  for (std::size_t k = 0; k < log_p.size(); ++k) denom += nu_hat[k] * std::exp(log_p[k] - m);
  if (!(denom > 0.0) || !std::isfinite(denom)) return false;
  for (std::size_t k = 0; k < log_p.size(); ++k) out[k] = std::exp(log_p[k] - m) / denom;
  return true;
}

// Pricing with dynamic demands ------------------------------------------------

class GaussianDemandPricing final : public Environment {
 public:
  GaussianDemandPricing(std::size_t dim, double mu0, double gamma, double sigma)
      : dim_(dim), mu0_(mu0), gamma_(gamma), sigma_(sigma) {
    if (dim < 1) throw ConfigError("gaussian_demand_pricing: dim must be >= 1");
    if (!(sigma > 0.0)) throw ConfigError("gaussian_demand_pricing: sigma must be positive");
  }

  EnvironmentKind kind() const override { return EnvironmentKind::GaussianDemandPricing; }
  Dynamics dynamics() const override { return Dynamics::Distribution; }
  std::size_t dim() const override { return dim_; }
  std::size_t sample_width() const override { return dim_; }
  std::size_t f_dim() const override { return dim_; }

  double mu0() const { return mu0_; }
  double gamma() const { return gamma_; }

  void draw(std::span<const double> theta, Rng& rng, std::span<double> z, int& group) const override {
    for (std::size_t j = 0; j < dim_; ++j) z[j] = mu0_ - gamma_ * theta[j] + sigma_ * rng.normal();
    group = -1;
  }

  void draw_clean(std::span<const double> theta, std::size_t n, Rng& rng, SampleBatch& out) const override {
    const Vector mean = f(theta);
    const std::span<double> rows = out.extend(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < dim_; ++j) rows[r * dim_ + j] = mean[j] + sigma_ * rng.normal();
  }

  double loss(std::span<const double> z, std::span<const double> theta) const override { return -dot(theta, z); }

  void gradient(std::span<const double> z, std::span<const double>, std::span<double> out) const override {
    for (std::size_t j = 0; j < dim_; ++j) out[j] = -z[j];
  }

  double accumulate_gradients(const SampleBatch& batch, std::span<const double> theta,
                              std::span<double> grad_sum) const override {
    Vector zsum(dim_, 0.0);
    for (std::size_t r = 0; r < batch.size(); ++r) axpy(1.0, batch.z(r), zsum);
    axpy(-1.0, zsum, grad_sum);
    return -dot(theta, zsum);
  }

  std::size_t accumulate_loss_scores(const SampleBatch& batch, std::span<const double> theta,
                                     std::span<const double> f_hat, std::span<double> out) const override {
    const double inv = 1.0 / (sigma_ * sigma_);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const auto z = batch.z(r);
      const double l = -dot(theta, z);
      for (std::size_t j = 0; j < dim_; ++j) out[j] += l * (z[j] - f_hat[j]) * inv;
    }
    return batch.size();
  }

  Vector f(std::span<const double> theta) const override {
    check_theta(*this, theta);
    Vector out(dim_);
    for (std::size_t j = 0; j < dim_; ++j) out[j] = mu0_ - gamma_ * theta[j];
    return out;
  }

  bool score(std::span<const double> z, int, std::span<const double> f_hat, std::span<double> out) const override {
    const double inv = 1.0 / (sigma_ * sigma_);
    for (std::size_t j = 0; j < dim_; ++j) out[j] = (z[j] - f_hat[j]) * inv;
    return true;
  }

  std::optional<DenseMatrix> analytic_jacobian(std::span<const double>) const override {
    return -gamma_ * DenseMatrix::identity(dim_);
  }

  std::optional<double> expected_loss(std::span<const double> theta) const override {
    double s = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) s -= theta[j] * (mu0_ - gamma_ * theta[j]);
    return s;
  }

  std::string describe() const override {
    return fmt::format("gaussian_demand_pricing(d={}, mu0={}, gamma={}, sigma={})", dim_, mu0_, gamma_, sigma_);
  }

 private:
  std::size_t dim_;
  double mu0_, gamma_, sigma_;
};

// Gaussian mixtures whose group fractions respond to theta ---------------------

/// Groups N(mean_k, var I); loss -theta^T z.
class GroupMixturePricing : public Environment {
 public:
  GroupMixturePricing(std::size_t dim, std::vector<Vector> means, double var)
      : dim_(dim), means_(std::move(means)), var_(var) {
    if (means_.size() < 2) throw ConfigError("group mixture: need at least two groups");
    if (!(var > 0.0)) throw ConfigError("group mixture: variance must be positive");
  }

  virtual Vector fractions(std::span<const double> theta) const = 0;
  virtual DenseMatrix fraction_jacobian(std::span<const double> theta) const = 0;

  Dynamics dynamics() const override { return Dynamics::Contribution; }
  std::size_t dim() const override { return dim_; }
  std::size_t sample_width() const override { return dim_; }
  std::size_t f_dim() const override { return means_.size(); }
  std::size_t num_groups() const override { return means_.size(); }

  void draw(std::span<const double> theta, Rng& rng, std::span<double> z, int& group) const override {
    const Vector nu = fractions(theta);
    const std::size_t k = draw_category(nu, rng);
    const double sd = std::sqrt(var_);
    for (std::size_t j = 0; j < dim_; ++j) z[j] = means_[k][j] + sd * rng.normal();
    group = static_cast<int>(k);
  }

  void draw_clean(std::span<const double> theta, std::size_t n, Rng& rng, SampleBatch& out) const override {
    const Vector nu = fractions(theta);
    const double sd = std::sqrt(var_);
    Vector z(dim_);
    out.reserve(out.size() + n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = draw_category(nu, rng);
      for (std::size_t j = 0; j < dim_; ++j) z[j] = means_[k][j] + sd * rng.normal();
      out.append(z, static_cast<int>(k));
    }
  }

  double loss(std::span<const double> z, std::span<const double> theta) const override { return -dot(theta, z); }

  void gradient(std::span<const double> z, std::span<const double>, std::span<double> out) const override {
    for (std::size_t j = 0; j < dim_; ++j) out[j] = -z[j];
  }

  Vector f(std::span<const double> theta) const override {
    check_theta(*this, theta);
    return fractions(theta);
  }

  bool score(std::span<const double> z, int, std::span<const double> f_hat, std::span<double> out) const override {
    Vector log_p(means_.size());
    for (std::size_t k = 0; k < means_.size(); ++k) {
      double ss = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) ss += (z[j] - means_[k][j]) * (z[j] - means_[k][j]);
      log_p[k] = -ss / (2.0 * var_);
    }
    return mixture_score(log_p, f_hat, out);
  }

  std::optional<DenseMatrix> analytic_jacobian(std::span<const double> theta) const override {
    return fraction_jacobian(theta);
  }

  std::optional<double> expected_loss(std::span<const double> theta) const override {
    const Vector nu = fractions(theta);
    double s = 0.0;
    for (std::size_t k = 0; k < means_.size(); ++k) s -= nu[k] * dot(theta, means_[k]);
    return s;
  }

 protected:
  std::size_t dim_;
  std::vector<Vector> means_;
  double var_;
};

std::vector<Vector> broadcast_means(std::size_t dim, std::span<const double> scalars) {
  std::vector<Vector> out;
  for (double m : scalars) out.emplace_back(dim, m);
  return out;
}

/// nu_k proportional to max(0, B - gamma theta^T mu_k).
class ContributionPricing final : public GroupMixturePricing {
 public:
  ContributionPricing(std::size_t dim, Vector group_means, double sigma, double budget, double gamma)
      : GroupMixturePricing(dim, broadcast_means(dim, group_means), sigma * sigma),
        scalars_(std::move(group_means)),
        budget_(budget),
        gamma_(gamma) {}

  EnvironmentKind kind() const override { return EnvironmentKind::ContributionPricing; }

  Vector fractions(std::span<const double> theta) const override {
    const Vector r = remaining(theta);
    const double s = std::accumulate(r.begin(), r.end(), 0.0);
    if (!(s > 0.0)) return Vector(r.size(), 1.0 / static_cast<double>(r.size()));
    Vector nu(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) nu[k] = r[k] / s;
    return nu;
  }

  DenseMatrix fraction_jacobian(std::span<const double> theta) const override {
    const Vector r = remaining(theta);
    const std::size_t K = r.size();
    DenseMatrix jac(K, dim_);
    const double s = std::accumulate(r.begin(), r.end(), 0.0);
    if (!(s > 0.0)) return jac;
    // dr_k/dtheta = -gamma mu_k on the active set
    DenseMatrix dr(K, dim_);
    Vector ds(dim_, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      if (!(r[k] > 0.0)) continue;
      for (std::size_t j = 0; j < dim_; ++j) {
        dr(k, j) = -gamma_ * means_[k][j];
        ds[j] += dr(k, j);
      }
    }
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < dim_; ++j) jac(k, j) = (dr(k, j) * s - r[k] * ds[j]) / (s * s);
    return jac;
  }

  std::string describe() const override {
    return fmt::format("contribution_pricing(d={}, means=[{}], B={}, gamma={})", dim_, fmt::join(scalars_, ","),
                       budget_, gamma_);
  }

 private:
  Vector remaining(std::span<const double> theta) const {
    Vector r(means_.size());
    for (std::size_t k = 0; k < means_.size(); ++k)
      r[k] = std::max(0.0, budget_ - gamma_ * dot(theta, means_[k]));
    return r;
  }

  Vector scalars_;
  double budget_, gamma_;
};

/// Scalar two-group mixture: group 0 ~ N(a1, v) with share 0.5 - 0.5 theta,
/// group 1 ~ N(a2, v) with share 0.5 + 0.5 theta.
class AppendixLinearContribution final : public GroupMixturePricing {
 public:
  AppendixLinearContribution(double a1, double a2, double var)
      : GroupMixturePricing(1, {Vector{a1}, Vector{a2}}, var), a1_(a1), a2_(a2) {}

  EnvironmentKind kind() const override { return EnvironmentKind::AppendixLinearContribution; }
  double a1() const { return a1_; }
  double a2() const { return a2_; }

  Vector fractions(std::span<const double> theta) const override {
    const double f2 = std::clamp(0.5 + 0.5 * theta[0], 0.0, 1.0);
    return {1.0 - f2, f2};
  }

  DenseMatrix fraction_jacobian(std::span<const double> theta) const override {
    DenseMatrix jac(2, 1);
    const double u = 0.5 + 0.5 * theta[0];
    if (u > 0.0 && u < 1.0) {
      jac(0, 0) = -0.5;
      jac(1, 0) = 0.5;
    }
    return jac;
  }

  std::string describe() const override {
    return fmt::format("appendix_linear_contribution(a1={}, a2={}, var={})", a1_, a2_, var_);
  }

 private:
  double a1_, a2_;
};

// Logistic models on (x, y) samples --------------------------------------------

/// z = (x_1..x_d, y) with y in {0, 1}; loss softplus(x^T theta) - y x^T theta + ridge |theta|^2.
class LogisticEnvironment : public Environment {
 public:
  LogisticEnvironment(std::size_t dim, double ridge) : dim_(dim), ridge_(ridge) {}

  Dynamics dynamics() const override { return Dynamics::Distribution; }
  std::size_t dim() const override { return dim_; }
  std::size_t sample_width() const override { return dim_ + 1; }
  std::size_t f_dim() const override { return 2 * dim_; }
  std::optional<std::size_t> label_index() const override { return dim_; }

  double loss(std::span<const double> z, std::span<const double> theta) const override {
    const double u = dot(z.first(dim_), theta);
    return softplus(u) - z[dim_] * u + ridge_ * dot(theta, theta);
  }

  void gradient(std::span<const double> z, std::span<const double> theta, std::span<double> out) const override {
    const double r = sigmoid(dot(z.first(dim_), theta)) - z[dim_];
    for (std::size_t j = 0; j < dim_; ++j) out[j] = r * z[j] + 2.0 * ridge_ * theta[j];
  }

  /// Per-class feature means stacked as [class 1; class 0]. A class absent
  /// from the batch falls back to the pooled mean.
  Vector estimate_f_hat(const SampleBatch& batch) const override {
    Vector sums(2 * dim_, 0.0), pooled(dim_, 0.0);
    std::size_t n1 = 0, n0 = 0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const auto z = batch.z(j);
      const bool one = z[dim_] >= 0.5;
      const std::size_t off = one ? 0 : dim_;
      for (std::size_t c = 0; c < dim_; ++c) {
        sums[off + c] += z[c];
        pooled[c] += z[c];
      }
      (one ? n1 : n0) += 1;
    }
    for (std::size_t c = 0; c < dim_; ++c) {
      pooled[c] /= static_cast<double>(batch.size());
      sums[c] = n1 ? sums[c] / static_cast<double>(n1) : pooled[c];
      sums[dim_ + c] = n0 ? sums[dim_ + c] / static_cast<double>(n0) : pooled[c];
    }
    return sums;
  }

  bool score(std::span<const double> z, int, std::span<const double> f_hat, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
    const bool one = z[dim_] >= 0.5;
    const std::size_t off = one ? 0 : dim_;
    for (std::size_t c = 0; c < dim_; ++c) out[off + c] = (z[c] - f_hat[off + c]) / class_variance(one, c);
    return true;
  }

  double sample_variance(const SampleBatch& batch) const override {
    // pooled within-class variance of the features
    const Vector m = estimate_f_hat(batch);
    double ss = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const auto z = batch.z(j);
      const std::size_t off = z[dim_] >= 0.5 ? 0 : dim_;
      for (std::size_t c = 0; c < dim_; ++c) ss += (z[c] - m[off + c]) * (z[c] - m[off + c]);
    }
    const double dof = static_cast<double>(batch.size()) - 2.0;
    return dof > 0.0 ? ss / (dof * static_cast<double>(dim_)) : 0.0;
  }

 protected:
  virtual double class_variance(bool class_one, std::size_t feature) const = 0;

  std::size_t dim_;
  double ridge_;
};

/// y ~ Bernoulli(1/2); x | y ~ N(m_y 1 - gamma_y theta, v I).
class StrategicClassification final : public LogisticEnvironment {
 public:
  StrategicClassification(std::size_t dim, double m1, double m0, double var, double gamma1, double gamma0,
                          double ridge)
      : LogisticEnvironment(dim, ridge), m1_(m1), m0_(m0), var_(var), gamma1_(gamma1), gamma0_(gamma0) {
    if (dim < 1) throw ConfigError("strategic_classification: dim must be >= 1");
    if (!(var > 0.0)) throw ConfigError("strategic_classification: class_var must be positive");
  }

  EnvironmentKind kind() const override { return EnvironmentKind::StrategicClassification; }

  void draw(std::span<const double> theta, Rng& rng, std::span<double> z, int& group) const override {
    const bool one = rng.bernoulli(0.5);
    const double m = one ? m1_ : m0_;
    const double g = one ? gamma1_ : gamma0_;
    const double sd = std::sqrt(var_);
    for (std::size_t j = 0; j < dim_; ++j) z[j] = m - g * theta[j] + sd * rng.normal();
    z[dim_] = one ? 1.0 : 0.0;
    group = -1;
  }

  Vector f(std::span<const double> theta) const override {
    check_theta(*this, theta);
    Vector out(2 * dim_);
    for (std::size_t j = 0; j < dim_; ++j) {
      out[j] = m1_ - gamma1_ * theta[j];
      out[dim_ + j] = m0_ - gamma0_ * theta[j];
    }
    return out;
  }

  std::optional<DenseMatrix> analytic_jacobian(std::span<const double>) const override {
    DenseMatrix jac(2 * dim_, dim_);
    for (std::size_t j = 0; j < dim_; ++j) {
      jac(j, j) = -gamma1_;
      jac(dim_ + j, j) = -gamma0_;
    }
    return jac;
  }

  std::optional<double> expected_loss(std::span<const double>) const override { return std::nullopt; }

  std::string describe() const override {
    return fmt::format("strategic_classification(d={}, m1={}, m0={}, var={}, gamma1={}, gamma0={})", dim_, m1_, m0_,
                       var_, gamma1_, gamma0_);
  }

 protected:
  double class_variance(bool, std::size_t) const override { return var_; }

 private:
  double m1_, m0_, var_, gamma1_, gamma0_;
};

/// Finite shard of (x, y) rows; deploying theta shifts x to x - gamma_y theta.
/// A request for exactly the shard size returns the whole shard in order;
/// any other n resamples rows uniformly with replacement.
class CsvStatic final : public LogisticEnvironment {
 public:
  CsvStatic(Dataset shard, double gamma1, double gamma0, double ridge)
      : LogisticEnvironment(shard.num_features(), ridge), data_(std::move(shard)), gamma1_(gamma1), gamma0_(gamma0) {
    if (data_.size() == 0) throw ConfigError("csv_static: empty shard");
    const std::size_t d = dim_;
    mean_.assign(2 * d, 0.0);
    var_.assign(2 * d, 0.0);
    std::size_t n1 = 0, n0 = 0;
    for (std::size_t r = 0; r < data_.size(); ++r) {
      const std::size_t off = data_.labels[r] == 1 ? 0 : d;
      (data_.labels[r] == 1 ? n1 : n0) += 1;
      for (std::size_t c = 0; c < d; ++c) mean_[off + c] += data_.features(r, c);
    }
    for (std::size_t c = 0; c < d; ++c) {
      if (n1) mean_[c] /= static_cast<double>(n1);
      if (n0) mean_[d + c] /= static_cast<double>(n0);
    }
    for (std::size_t r = 0; r < data_.size(); ++r) {
      const std::size_t off = data_.labels[r] == 1 ? 0 : d;
      for (std::size_t c = 0; c < d; ++c) {
        const double e = data_.features(r, c) - mean_[off + c];
        var_[off + c] += e * e;
      }
    }
    for (std::size_t c = 0; c < d; ++c) {
      var_[c] = n1 > 1 ? std::max(var_[c] / static_cast<double>(n1 - 1), 1e-6) : 1.0;
      var_[d + c] = n0 > 1 ? std::max(var_[d + c] / static_cast<double>(n0 - 1), 1e-6) : 1.0;
    }
  }

  EnvironmentKind kind() const override { return EnvironmentKind::CsvStatic; }
  std::size_t rows() const { return data_.size(); }

  void draw(std::span<const double> theta, Rng& rng, std::span<double> z, int& group) const override {
    row(static_cast<std::size_t>(rng.below(data_.size())), theta, z);
    group = -1;
  }

  void draw_clean(std::span<const double> theta, std::size_t n, Rng& rng, SampleBatch& out) const override {
    if (n != data_.size()) {
      Environment::draw_clean(theta, n, rng, out);
      return;
    }
    Vector z(dim_ + 1);
    out.reserve(out.size() + n);
    for (std::size_t r = 0; r < n; ++r) {
      row(r, theta, z);
      out.append(z, -1);
    }
  }

  Vector f(std::span<const double> theta) const override {
    check_theta(*this, theta);
    Vector out = mean_;
    for (std::size_t j = 0; j < dim_; ++j) {
      out[j] -= gamma1_ * theta[j];
      out[dim_ + j] -= gamma0_ * theta[j];
    }
    return out;
  }

  std::optional<DenseMatrix> analytic_jacobian(std::span<const double>) const override {
    DenseMatrix jac(2 * dim_, dim_);
    for (std::size_t j = 0; j < dim_; ++j) {
      jac(j, j) = -gamma1_;
      jac(dim_ + j, j) = -gamma0_;
    }
    return jac;
  }

  std::optional<double> expected_loss(std::span<const double> theta) const override {
    Vector z(dim_ + 1);
    double s = 0.0;
    for (std::size_t r = 0; r < data_.size(); ++r) {
      row(r, theta, z);
      s += loss(z, theta);
    }
    return s / static_cast<double>(data_.size());
  }

  std::optional<double> exact_accuracy(std::span<const double> theta) const override {
    Vector z(dim_ + 1);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < data_.size(); ++r) {
      row(r, theta, z);
      const bool predict_one = dot(std::span<const double>(z).first(dim_), theta) >= 0.0;
      correct += predict_one == (z[dim_] >= 0.5) ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(data_.size());
  }

  std::string describe() const override {
    return fmt::format("csv_static(rows={}, d={}, gamma1={}, gamma0={})", data_.size(), dim_, gamma1_, gamma0_);
  }

 protected:
  double class_variance(bool class_one, std::size_t feature) const override {
    return var_[(class_one ? 0 : dim_) + feature];
  }

 private:
  void row(std::size_t r, std::span<const double> theta, std::span<double> z) const {
    const bool one = data_.labels[r] == 1;
    const double g = one ? gamma1_ : gamma0_;
    for (std::size_t c = 0; c < dim_; ++c) z[c] = data_.features(r, c) - g * theta[c];
    z[dim_] = one ? 1.0 : 0.0;
  }

  Dataset data_;
  double gamma1_, gamma0_;
  Vector mean_, var_;
};

// Regressions ------------------------------------------------------------------

/// x ~ N(mu 1, v I); y = (a 1 - gamma theta)^T x + N(0, s_n^2); squared loss plus ridge.
class HousePricingRegression final : public Environment {
 public:
  HousePricingRegression(std::size_t dim, double x_mean, double x_var, double coef, double gamma, double noise_var,
                         double ridge)
      : dim_(dim), x_mean_(x_mean), x_var_(x_var), coef_(coef), gamma_(gamma), noise_var_(noise_var), ridge_(ridge) {
    if (dim < 1) throw ConfigError("house_pricing_regression: dim must be >= 1");
    if (!(x_var > 0.0) || !(noise_var > 0.0))
      throw ConfigError("house_pricing_regression: x_var and noise_var must be positive");
  }

  EnvironmentKind kind() const override { return EnvironmentKind::HousePricingRegression; }
  Dynamics dynamics() const override { return Dynamics::Distribution; }
  std::size_t dim() const override { return dim_; }
  std::size_t sample_width() const override { return dim_ + 1; }
  std::size_t f_dim() const override { return dim_; }

  double gamma() const { return gamma_; }
  double coef() const { return coef_; }
  double ridge() const { return ridge_; }
  double x_mean() const { return x_mean_; }
  double x_var() const { return x_var_; }

  void draw(std::span<const double> theta, Rng& rng, std::span<double> z, int& group) const override {
    const double sd = std::sqrt(x_var_);
    double y = std::sqrt(noise_var_) * rng.normal();
    for (std::size_t j = 0; j < dim_; ++j) {
      z[j] = x_mean_ + sd * rng.normal();
      y += (coef_ - gamma_ * theta[j]) * z[j];
    }
    z[dim_] = y;
    group = -1;
  }

  double loss(std::span<const double> z, std::span<const double> theta) const override {
    const double e = dot(theta, z.first(dim_)) - z[dim_];
    return e * e + ridge_ * dot(theta, theta);
  }

  void gradient(std::span<const double> z, std::span<const double> theta, std::span<double> out) const override {
    const double e = dot(theta, z.first(dim_)) - z[dim_];
    for (std::size_t j = 0; j < dim_; ++j) out[j] = 2.0 * e * z[j] + 2.0 * ridge_ * theta[j];
  }

  Vector f(std::span<const double> theta) const override {
    check_theta(*this, theta);
    Vector beta(dim_);
    for (std::size_t j = 0; j < dim_; ++j) beta[j] = coef_ - gamma_ * theta[j];
    return beta;
  }

  /// Least-squares coefficient of y on x.
  Vector estimate_f_hat(const SampleBatch& batch) const override {
    DenseMatrix gram(dim_, dim_);
    Vector xy(dim_, 0.0);
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const auto z = batch.z(j);
      for (std::size_t a = 0; a < dim_; ++a) {
        xy[a] += z[a] * z[dim_];
        for (std::size_t b = 0; b < dim_; ++b) gram(a, b) += z[a] * z[b];
      }
    }
    return pseudo_inverse(gram).apply(xy);
  }

  bool score(std::span<const double> z, int, std::span<const double> f_hat, std::span<double> out) const override {
    const double r = (z[dim_] - dot(f_hat, z.first(dim_))) / noise_var_;
    for (std::size_t j = 0; j < dim_; ++j) out[j] = r * z[j];
    return true;
  }

  double sample_variance(const SampleBatch& batch) const override {
    if (batch.size() < 2) return 0.0;
    double mean = 0.0, ss = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) mean += batch.z(j)[dim_];
    mean /= static_cast<double>(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) ss += (batch.z(j)[dim_] - mean) * (batch.z(j)[dim_] - mean);
    return ss / static_cast<double>(batch.size() - 1);
  }

  std::optional<DenseMatrix> analytic_jacobian(std::span<const double>) const override {
    return -gamma_ * DenseMatrix::identity(dim_);
  }

  std::optional<double> expected_loss(std::span<const double> theta) const override {
    // E[(theta - beta)^T x x^T (theta - beta)] + s_n^2 + ridge |theta|^2, E[x x^T] = v I + mu^2 1 1^T
    const Vector beta = f(theta);
    double sq = 0.0, sum = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double e = theta[j] - beta[j];
      sq += e * e;
      sum += e;
    }
    return x_var_ * sq + x_mean_ * x_mean_ * sum * sum + noise_var_ + ridge_ * dot(theta, theta);
  }

  std::string describe() const override {
    return fmt::format("house_pricing_regression(d={}, a={}, gamma={}, ridge={})", dim_, coef_, gamma_, ridge_);
  }

 private:
  std::size_t dim_;
  double x_mean_, x_var_, coef_, gamma_, noise_var_, ridge_;
};

/// Scalar model; group k has y = b_k x + N(0, s_n^2). Group shares follow the
/// other group's expected squared error: nu_k = (l_{-k} + c) / sum_k' (l_k' + c).
class ContributionRegression final : public Environment {
 public:
  ContributionRegression(double x_mean, double x_var, double slope1, double slope2, double noise_var, double c,
                         double ridge)
      : x_mean_(x_mean), x_var_(x_var), slopes_{slope1, slope2}, noise_var_(noise_var), c_(c), ridge_(ridge) {
    if (!(x_var > 0.0) || !(noise_var > 0.0))
      throw ConfigError("contribution_regression: x_var and noise_var must be positive");
    if (!(c > 0.0)) throw ConfigError("contribution_regression: c must be positive");
  }

  EnvironmentKind kind() const override { return EnvironmentKind::ContributionRegression; }
  Dynamics dynamics() const override { return Dynamics::Contribution; }
  std::size_t dim() const override { return 1; }
  std::size_t sample_width() const override { return 2; }
  std::size_t f_dim() const override { return 2; }
  std::size_t num_groups() const override { return 2; }

  Vector fractions(double theta) const {
    const double l0 = group_loss(0, theta), l1 = group_loss(1, theta);
    const double s = l0 + l1 + 2.0 * c_;
    return {(l1 + c_) / s, (l0 + c_) / s};
  }

  void draw(std::span<const double> theta, Rng& rng, std::span<double> z, int& group) const override {
    const Vector nu = fractions(theta[0]);
    const std::size_t k = draw_category(nu, rng);
    z[0] = x_mean_ + std::sqrt(x_var_) * rng.normal();
    z[1] = slopes_[k] * z[0] + std::sqrt(noise_var_) * rng.normal();
    group = static_cast<int>(k);
  }

  double loss(std::span<const double> z, std::span<const double> theta) const override {
    const double e = theta[0] * z[0] - z[1];
    return e * e + ridge_ * theta[0] * theta[0];
  }

  void gradient(std::span<const double> z, std::span<const double> theta, std::span<double> out) const override {
    out[0] = 2.0 * (theta[0] * z[0] - z[1]) * z[0] + 2.0 * ridge_ * theta[0];
  }

  Vector f(std::span<const double> theta) const override {
    check_theta(*this, theta);
    return fractions(theta[0]);
  }

  bool score(std::span<const double> z, int, std::span<const double> f_hat, std::span<double> out) const override {
    double log_p[2];
    for (std::size_t k = 0; k < 2; ++k) {
      const double e = z[1] - slopes_[k] * z[0];
      log_p[k] = -e * e / (2.0 * noise_var_);
    }
    return mixture_score(log_p, f_hat, out);
  }

  std::optional<DenseMatrix> analytic_jacobian(std::span<const double> theta) const override {
    const double t = theta[0];
    const double l0 = group_loss(0, t), l1 = group_loss(1, t);
    const double d0 = group_loss_derivative(0, t), d1 = group_loss_derivative(1, t);
    const double s = l0 + l1 + 2.0 * c_;
    const double ds = d0 + d1;
    DenseMatrix jac(2, 1);
    jac(0, 0) = (d1 * s - (l1 + c_) * ds) / (s * s);
    jac(1, 0) = (d0 * s - (l0 + c_) * ds) / (s * s);
    return jac;
  }

  std::optional<double> expected_loss(std::span<const double> theta) const override {
    const double t = theta[0];
    const Vector nu = fractions(t);
    return nu[0] * group_loss(0, t) + nu[1] * group_loss(1, t) + ridge_ * t * t;
  }

  std::string describe() const override {
    return fmt::format("contribution_regression(slopes={},{}, noise_var={}, c={})", slopes_[0], slopes_[1],
                       noise_var_, c_);
  }

 private:
  double second_moment() const { return x_var_ + x_mean_ * x_mean_; }
  /// E_k[(theta x - y)^2] = m (theta - b_k)^2 + s_n^2
  double group_loss(std::size_t k, double t) const {
    return second_moment() * (t - slopes_[k]) * (t - slopes_[k]) + noise_var_;
  }
  double group_loss_derivative(std::size_t k, double t) const { return 2.0 * second_moment() * (t - slopes_[k]); }

  double x_mean_, x_var_;
  double slopes_[2];
  double noise_var_, c_, ridge_;
};

}  // namespace

// Free functions -------------------------------------------------------------

SampleBatch draw_batch(const ContaminatedClient& client, std::span<const double> theta, std::size_t n,
                       Rng& sample_rng, Rng& coin_rng) {
  if (n < 1) throw ConfigError("draw_batch: n must be >= 1");
  const Environment& env = *client.env;
  check_theta(env, theta);
  SampleBatch out(env.sample_width());
  if (client.epsilon <= 0.0 || !client.contaminant) {
    env.draw_clean(theta, n, sample_rng, out);
    return out;
  }
  out.reserve(n);
  Vector z(env.sample_width());
  for (std::size_t j = 0; j < n; ++j) {
    int group = -1;
    if (coin_rng.bernoulli(client.epsilon)) {
      client.contaminant->draw(env, sample_rng, z, group);
      out.append(z, group, true);
    } else {
      env.draw(theta, sample_rng, z, group);
      out.append(z, group, false);
    }
  }
  return out;
}

Vector estimate_f_hat(const Environment& env, const SampleBatch& batch) {
  if (batch.empty()) throw ConfigError("estimate_f_hat: empty sample set");
  if (batch.width() != env.sample_width())
    throw ConfigError("estimate_f_hat: sample width does not match the environment");
  return env.estimate_f_hat(batch);
}

Vector score(const Environment& env, std::span<const double> z, int group, std::span<const double> f_hat) {
  if (f_hat.size() != env.f_dim())
    throw ConfigError(fmt::format("score: f_hat has length {}, environment expects {}", f_hat.size(), env.f_dim()));
  Vector out(env.f_dim());
  if (!env.score(z, group, f_hat, out)) throw NumericError("score: sample has zero density under f_hat");
  return out;
}

Vector strategic_response(std::span<const double> x, double gamma, std::span<const double> theta) {
  if (x.size() != theta.size()) throw ConfigError("strategic_response: dimension mismatch");
  Vector out(x.begin(), x.end());
  axpy(-gamma, theta, out);
  return out;
}

std::optional<ClosedFormOptima> closed_form_optima(std::span<const ContaminatedClient> clients) {
  if (clients.empty()) return std::nullopt;
  const EnvironmentKind kind = clients.front().env->kind();
  for (const auto& c : clients)
    if (c.env->kind() != kind) return std::nullopt;
  double wsum = 0.0;
  for (const auto& c : clients) wsum += c.alpha;
  if (!(wsum > 0.0)) return std::nullopt;
  const std::size_t d = clients.front().env->dim();

  switch (kind) {
    case EnvironmentKind::GaussianDemandPricing: {
      double mu = 0.0, g = 0.0;
      for (const auto& c : clients) {
        const auto& e = static_cast<const GaussianDemandPricing&>(*c.env);
        mu += c.alpha / wsum * e.mu0();
        g += c.alpha / wsum * e.gamma();
      }
      if (g == 0.0) return std::nullopt;
      return ClosedFormOptima{Vector(d, mu / (2.0 * g)), Vector(d, mu / g)};
    }
    case EnvironmentKind::AppendixLinearContribution: {
      const auto& e0 = static_cast<const AppendixLinearContribution&>(*clients.front().env);
      for (const auto& c : clients) {
        const auto& e = static_cast<const AppendixLinearContribution&>(*c.env);
        if (e.a1() != e0.a1() || e.a2() != e0.a2()) return std::nullopt;
      }
      const double a1 = e0.a1(), a2 = e0.a2();
      if (a1 == a2) return std::nullopt;
      return ClosedFormOptima{Vector{(a1 + a2) / (2.0 * (a1 - a2))}, Vector{(a1 + a2) / (a1 - a2)}};
    }
    case EnvironmentKind::HousePricingRegression: {
      // (sum a_i (1+g_i)^2 M + lam I) theta_po = sum a_i (1+g_i) M a
      // ((1 + g_bar) M + lam I) theta_ps = M a, M = E[x x^T]
      const auto& e0 = static_cast<const HousePricingRegression&>(*clients.front().env);
      double s1 = 0.0, s2 = 0.0;
      for (const auto& c : clients) {
        const auto& e = static_cast<const HousePricingRegression&>(*c.env);
        if (e.coef() != e0.coef() || e.ridge() != e0.ridge() || e.x_mean() != e0.x_mean() ||
            e.x_var() != e0.x_var())
          return std::nullopt;
        const double w = c.alpha / wsum;
        s1 += w * (1.0 + e.gamma());
        s2 += w * (1.0 + e.gamma()) * (1.0 + e.gamma());
      }
      DenseMatrix M(d, d, e0.x_mean() * e0.x_mean());
      for (std::size_t j = 0; j < d; ++j) M(j, j) += e0.x_var();
      const Vector Ma = M.apply(Vector(d, e0.coef()));
      const DenseMatrix lam = e0.ridge() * DenseMatrix::identity(d);
      const DenseMatrix A_po = s2 * M + lam;
      const DenseMatrix A_ps = s1 * M + lam;
      Vector rhs_po = Ma;
      for (double& x : rhs_po) x *= s1;
      return ClosedFormOptima{pseudo_inverse(A_po).apply(rhs_po), pseudo_inverse(A_ps).apply(Ma)};
    }
    default:
      return std::nullopt;
  }
}

double performative_loss(std::span<const ContaminatedClient> clients, std::span<const double> theta,
                         std::size_t n_eval, std::uint64_t seed, bool prefer_closed_form) {
  double total = 0.0, wsum = 0.0;
  for (const auto& c : clients) wsum += c.alpha;
  if (!(wsum > 0.0)) throw ConfigError("performative_loss: client weights sum to zero");
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const auto& c = clients[i];
    if (c.alpha == 0.0) continue;
    const Environment& env = *c.env;
    double li = 0.0;
    std::optional<double> exact = prefer_closed_form ? env.expected_loss(theta) : std::nullopt;
    if (exact) {
      li = *exact;
    } else {
      Rng rng(seed, i, "eval");
      SampleBatch batch(env.sample_width());
      env.draw_clean(theta, n_eval, rng, batch);
      for (std::size_t j = 0; j < batch.size(); ++j) li += env.loss(batch.z(j), theta);
      li /= static_cast<double>(batch.size());
    }
    total += c.alpha / wsum * li;
  }
  return total;
}

double classify_accuracy(std::span<const ContaminatedClient> clients, std::span<const double> theta,
                         std::size_t n_eval, std::uint64_t seed) {
  double total = 0.0, wsum = 0.0;
  for (const auto& c : clients) wsum += c.alpha;
  if (!(wsum > 0.0)) throw ConfigError("classify_accuracy: client weights sum to zero");
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const auto& c = clients[i];
    const Environment& env = *c.env;
    const auto label = env.label_index();
    if (!label) throw ConfigError("classify_accuracy: " + env.describe() + " is not a classifier");
    double acc = 0.0;
    if (const auto exact = env.exact_accuracy(theta)) {
      acc = *exact;
    } else {
      Rng rng(seed, i, "eval-accuracy");
      SampleBatch batch(env.sample_width());
      env.draw_clean(theta, n_eval, rng, batch);
      std::size_t correct = 0;
      for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto z = batch.z(j);
        const bool predict_one = dot(z.first(*label), theta) >= 0.0;
        correct += predict_one == (z[*label] >= 0.5) ? 1 : 0;
      }
      acc = static_cast<double>(correct) / static_cast<double>(batch.size());
    }
    total += c.alpha / wsum * acc;
  }
  return total;
}

// Factories ------------------------------------------------------------------

std::shared_ptr<const Environment> make_gaussian_demand_pricing(std::size_t dim, double mu0, double gamma,
                                                                double sigma) {
  return std::make_shared<GaussianDemandPricing>(dim, mu0, gamma, sigma);
}

std::shared_ptr<const Environment> make_contribution_pricing(std::size_t dim, Vector group_means, double sigma,
                                                             double budget, double gamma) {
  return std::make_shared<ContributionPricing>(dim, std::move(group_means), sigma, budget, gamma);
}

std::shared_ptr<const Environment> make_appendix_linear_contribution(double a1, double a2, double group_var) {
  return std::make_shared<AppendixLinearContribution>(a1, a2, group_var);
}

std::shared_ptr<const Environment> make_strategic_classification(std::size_t dim, double class1_mean,
                                                                 double class0_mean, double class_var,
                                                                 double gamma1, double gamma0, double ridge) {
  return std::make_shared<StrategicClassification>(dim, class1_mean, class0_mean, class_var, gamma1, gamma0, ridge);
}

std::shared_ptr<const Environment> make_house_pricing_regression(std::size_t dim, double x_mean, double x_var,
                                                                 double coef, double gamma, double noise_var,
                                                                 double ridge) {
  return std::make_shared<HousePricingRegression>(dim, x_mean, x_var, coef, gamma, noise_var, ridge);
}

std::shared_ptr<const Environment> make_contribution_regression(double x_mean, double x_var, double slope1,
                                                                double slope2, double noise_var, double c,
                                                                double ridge) {
  return std::make_shared<ContributionRegression>(x_mean, x_var, slope1, slope2, noise_var, c, ridge);
}

std::shared_ptr<const Environment> make_csv_static(Dataset shard, double gamma1, double gamma0, double ridge) {
  return std::make_shared<CsvStatic>(std::move(shard), gamma1, gamma0, ridge);
}

std::vector<ContaminatedClient> make_clients(const ExperimentConfig& cfg) {
  const std::size_t N = cfg.num_clients;
  const EnvironmentConfig& e = cfg.environment;
  const Vector gamma = linspace_clients(e.gamma_low, e.gamma_high, N);
  const Vector gamma0 = linspace_clients(e.gamma0_low, e.gamma0_high, N);
  const Vector mu0 = linspace_clients(e.mu0_low, e.mu0_high, N);
  const Vector alpha = cfg.weights();

  std::vector<Dataset> shards;
  if (e.kind == EnvironmentKind::CsvStatic) {
    if (e.data_path.empty()) throw ConfigError("csv_static requires environment.data_path");
    const Dataset data = ingest_csv(std::filesystem::path(e.data_path));
    if (data.num_features() != e.dim)
      throw ConfigError(fmt::format("csv_static: file has {} features but environment.dim is {}",
                                    data.num_features(), e.dim));
    shards = shard(data, N);
  }

  std::size_t n0 = 0;
  if (const auto* fixed = std::get_if<FixedSampleSize>(&cfg.sample_size))
    n0 = fixed->n;
  else
    n0 = std::get<AdaptiveSampleSize>(cfg.sample_size).n_max;

  auto contaminant = std::make_shared<GaussianContaminant>(cfg.contamination.mean, cfg.contamination.std);
  std::vector<ContaminatedClient> clients(N);
  for (std::size_t i = 0; i < N; ++i) {
    ContaminatedClient& c = clients[i];
    c.alpha = alpha[i];
    c.gamma = gamma[i];
    c.epsilon = cfg.contamination.epsilon;
    c.contaminant = contaminant;
    c.n = n0;
    switch (e.kind) {
      case EnvironmentKind::GaussianDemandPricing:
        c.env = make_gaussian_demand_pricing(e.dim, mu0[i], gamma[i], e.sigma);
        break;
      case EnvironmentKind::ContributionPricing:
        c.env = make_contribution_pricing(e.dim, e.group_means, e.sigma, e.budget, gamma[i]);
        break;
      case EnvironmentKind::AppendixLinearContribution:
        c.env = make_appendix_linear_contribution(e.a1, e.a2, e.group_var);
        break;
      case EnvironmentKind::StrategicClassification: {
        const double m1 = e.heterogeneous_classes && i >= N / 2 && N > 1 ? e.class1_mean_alt : e.class1_mean;
        c.env = make_strategic_classification(e.dim, m1, e.class0_mean, e.class_var, gamma[i], gamma0[i], cfg.ridge);
        break;
      }
      case EnvironmentKind::HousePricingRegression:
        c.env = make_house_pricing_regression(e.dim, e.x_mean, e.x_var, e.coef, gamma[i], e.noise_var, cfg.ridge);
        break;
      case EnvironmentKind::ContributionRegression:
        c.env = make_contribution_regression(e.x_mean, e.x_var, e.slope1, e.slope2, e.noise_var, e.c, cfg.ridge);
        break;
      case EnvironmentKind::CsvStatic:
        c.env = make_csv_static(std::move(shards[i]), gamma[i], gamma0[i], cfg.ridge);
        c.n = c.env ? static_cast<const CsvStatic&>(*c.env).rows() : c.n;
        break;
    }
    if (c.env->dim() != e.dim)
      throw ConfigError(fmt::format("{} has dimension {}, config says {}", c.env->describe(), c.env->dim(), e.dim));
  }
  return clients;
}

}  // namespace perffl
