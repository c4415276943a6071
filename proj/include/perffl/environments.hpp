#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perffl/core.hpp"
#include "perffl/dataset.hpp"
#include "perffl/linalg.hpp"
#include "perffl/rng.hpp"

namespace perffl {

/// Samples stored row-major, `width` values per sample, with an optional
/// group label and the hidden contamination flag.
class SampleBatch {
 public:
  explicit SampleBatch(std::size_t width = 0) : width_(width) {}

  std::size_t size() const { return group_.size(); }
  std::size_t width() const { return width_; }
  bool empty() const { return group_.empty(); }

  std::span<const double> z(std::size_t j) const { return {values_.data() + j * width_, width_}; }
  /// -1 when the environment has no groups.
  int group(std::size_t j) const { return group_[j]; }

  void reserve(std::size_t n);
  void clear();
  void append(std::span<const double> z, int group, bool contaminant = false);
  /// Appends n clean rows with the given group and returns their storage.
  std::span<double> extend(std::size_t n, int group = -1);

  SampleBatch subset(std::span<const std::size_t> indices) const;

 private:
  friend struct ContaminationOracle;

  std::size_t width_;
  std::vector<double> values_;
  std::vector<int> group_;
  std::vector<unsigned char> contaminant_;
};

/// Ground truth about which samples came from the contaminant. Only
/// evaluation and diagnostic code may use it; estimators never see it.
struct ContaminationOracle {
  static bool is_contaminant(const SampleBatch& batch, std::size_t j) { return batch.contaminant_[j] != 0; }
  static std::size_t count(const SampleBatch& batch);
};

enum class Dynamics { Distribution, Contribution };

/// A performative distribution map D(theta) together with the loss and the
/// analytic pieces the estimators need.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual EnvironmentKind kind() const = 0;
  virtual Dynamics dynamics() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t sample_width() const = 0;
  /// Length of f(theta).
  virtual std::size_t f_dim() const = 0;
  virtual std::size_t num_groups() const { return 0; }
  /// Column of z holding a 0/1 label, if any.
  virtual std::optional<std::size_t> label_index() const { return std::nullopt; }
  bool is_classifier() const { return label_index().has_value(); }

  /// One draw from D(theta). `group` receives the group label or -1.
  virtual void draw(std::span<const double> theta, Rng& rng, std::span<double> z, int& group) const = 0;
  /// Appends n clean samples from D(theta).
  virtual void draw_clean(std::span<const double> theta, std::size_t n, Rng& rng, SampleBatch& out) const;

  virtual double loss(std::span<const double> z, std::span<const double> theta) const = 0;
  virtual void gradient(std::span<const double> z, std::span<const double> theta, std::span<double> out) const = 0;

  /// Sum of per-sample gradients into `grad_sum` (length d) and returns the
  /// sum of losses.
  virtual double accumulate_gradients(const SampleBatch& batch, std::span<const double> theta,
                                      std::span<double> grad_sum) const;
  /// Sum over samples of loss(z_j) * score(z_j, f_hat) into `out` (length
  /// f_dim); returns the number of samples with nonzero density.
  virtual std::size_t accumulate_loss_scores(const SampleBatch& batch, std::span<const double> theta,
                                             std::span<const double> f_hat, std::span<double> out) const;

  /// The distribution-map parameter f(theta).
  virtual Vector f(std::span<const double> theta) const = 0;
  /// Estimate of f from samples: empirical mean for location families,
  /// group frequencies for contribution mixtures.
  virtual Vector estimate_f_hat(const SampleBatch& batch) const;
  /// d log p(z; f) / d f at f = f_hat. Returns false when the sample has zero
  /// density under f_hat and must be skipped.
  virtual bool score(std::span<const double> z, int group, std::span<const double> f_hat,
                     std::span<double> out) const = 0;
  /// Exact df/dtheta (f_dim x dim), when known.
  virtual std::optional<DenseMatrix> analytic_jacobian(std::span<const double> theta) const = 0;
  /// Closed-form E_{Z ~ D(theta)} loss(Z; theta), when known.
  virtual std::optional<double> expected_loss(std::span<const double> theta) const = 0;
  /// Exact accuracy for classifiers with finite support.
  virtual std::optional<double> exact_accuracy(std::span<const double>) const { return std::nullopt; }
  /// Variance of the data used by the adaptive sample size rule.
  virtual double sample_variance(const SampleBatch& batch) const;

  virtual std::string describe() const = 0;
};

/// Fixed contamination sampler Q.
class Contaminant {
 public:
  virtual ~Contaminant() = default;
  virtual void draw(const Environment& env, Rng& rng, std::span<double> z, int& group) const = 0;
};

/// Every non-label coordinate ~ N(mean, std^2); labels fair coin; groups uniform.
class GaussianContaminant final : public Contaminant {
 public:
  GaussianContaminant(double mean, double std) : mean_(mean), std_(std) {}
  void draw(const Environment& env, Rng& rng, std::span<double> z, int& group) const override;

 private:
  double mean_;
  double std_;
};

struct ContaminatedClient {
  std::shared_ptr<const Environment> env;
  std::shared_ptr<const Contaminant> contaminant;
  double epsilon = 0.0;
  double alpha = 1.0;
  double gamma = 0.0;
  std::size_t n = 500;
};

/// Draws n samples from (1 - eps) D(theta) + eps Q. The per-sample coin comes
/// from `coin_rng`; samples and contaminants come from `sample_rng`.
SampleBatch draw_batch(const ContaminatedClient& client, std::span<const double> theta, std::size_t n,
                       Rng& sample_rng, Rng& coin_rng);

Vector estimate_f_hat(const Environment& env, const SampleBatch& batch);
Vector score(const Environment& env, std::span<const double> z, int group, std::span<const double> f_hat);

/// x - gamma * theta: the best response of an agent with quadratic
/// manipulation cost to a linear score.
Vector strategic_response(std::span<const double> x, double gamma, std::span<const double> theta);

struct ClosedFormOptima {
  ModelVector theta_po;
  ModelVector theta_ps;
};

/// Performative optimum and stable point for the environments that admit
/// them (demand pricing, house pricing with ridge, appendix linear
/// contribution). All clients must share the environment kind.
std::optional<ClosedFormOptima> closed_form_optima(std::span<const ContaminatedClient> clients);

/// sum_i alpha_i E_{D_i(theta)} loss on clean data. Uses the closed form when
/// available and `prefer_closed_form`, otherwise Monte Carlo with n_eval draws
/// per client from a stream keyed by (seed, client, "eval").
double performative_loss(std::span<const ContaminatedClient> clients, std::span<const double> theta,
                         std::size_t n_eval, std::uint64_t seed, bool prefer_closed_form = true);

/// Weighted accuracy of the rule sigmoid(x^T theta) >= 1/2 on fresh clean draws.
double classify_accuracy(std::span<const ContaminatedClient> clients, std::span<const double> theta,
                         std::size_t n_eval, std::uint64_t seed);

// Concrete environments -----------------------------------------------------

std::shared_ptr<const Environment> make_gaussian_demand_pricing(std::size_t dim, double mu0, double gamma,
                                                                double sigma);
std::shared_ptr<const Environment> make_contribution_pricing(std::size_t dim, Vector group_means, double sigma,
                                                             double budget, double gamma);
std::shared_ptr<const Environment> make_appendix_linear_contribution(double a1, double a2, double group_var);
std::shared_ptr<const Environment> make_strategic_classification(std::size_t dim, double class1_mean,
                                                                 double class0_mean, double class_var,
                                                                 double gamma1, double gamma0, double ridge);
std::shared_ptr<const Environment> make_house_pricing_regression(std::size_t dim, double x_mean, double x_var,
                                                                 double coef, double gamma, double noise_var,
                                                                 double ridge);
std::shared_ptr<const Environment> make_contribution_regression(double x_mean, double x_var, double slope1,
                                                                double slope2, double noise_var, double c,
                                                                double ridge);
std::shared_ptr<const Environment> make_csv_static(Dataset shard, double gamma1, double gamma0, double ridge);

/// Builds every client of an experiment from its configuration.
std::vector<ContaminatedClient> make_clients(const ExperimentConfig& cfg);

}  // namespace perffl
