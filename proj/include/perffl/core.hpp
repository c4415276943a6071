#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace perffl {

using Vector = std::vector<double>;

/// A point in the parameter box. Length is fixed for the whole run.
using ModelVector = Vector;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed axis-aligned box; lower[j] <= upper[j] for every coordinate.
struct ParameterBox {
  Vector lower;
  Vector upper;

  static ParameterBox uniform(std::size_t dim, double lo, double hi);
  std::size_t dim() const { return lower.size(); }
  bool contains(std::span<const double> theta) const;
  void validate() const;
};

enum class Algorithm { ProFL, PoFL, PFL, CentralizedPG };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct FixedSampleSize {
  std::size_t n = 500;
};

struct AdaptiveSampleSize {
  double Phi = 0.05;  // error bound
  double phi = 0.05;  // failure probability
  std::size_t n_min = 50;
  std::size_t n_max = 1000;
};

using SampleSizeMode = std::variant<FixedSampleSize, AdaptiveSampleSize>;

struct RobustFilterConfig {
  double C = 0.002;
  double J = 0.01;
  std::size_t B = 20;
};

enum class EnvironmentKind {
  GaussianDemandPricing,
  ContributionPricing,
  StrategicClassification,
  HousePricingRegression,
  ContributionRegression,
  AppendixLinearContribution,
  CsvStatic,
};

std::string to_string(EnvironmentKind k);
EnvironmentKind environment_kind_from_string(const std::string& s);

/// Parameters for every concrete environment. Fields irrelevant to the
/// selected kind are ignored. Per-client ranges are spread evenly across
/// clients (client 0 gets the low end, client N-1 the high end).
struct EnvironmentConfig {
  EnvironmentKind kind = EnvironmentKind::GaussianDemandPricing;
  std::size_t dim = 1;

  // pricing with dynamic demands
  double mu0_low = 6.0;
  double mu0_high = 6.0;
  double sigma = 1.0;
  double gamma_low = 2.0;
  double gamma_high = 2.0;

  // pricing with dynamic contribution (group means are scalars broadcast to dim)
  Vector group_means{1.0, 3.0};
  double budget = 10.0;

  // appendix linear contribution
  double a1 = 0.5;
  double a2 = -0.5;
  double group_var = 0.25;

  // strategic classification
  double class1_mean = -1.0;
  double class0_mean = 1.0;
  double class1_mean_alt = -0.8;  // second half of clients when heterogeneous_classes
  bool heterogeneous_classes = false;
  double class_var = 0.25;
  double gamma0_low = 0.0;
  double gamma0_high = 0.04;

  // regressions
  double x_mean = 1.0;
  double x_var = 1.0;
  double coef = 1.0;        // a in Y = (a - gamma*theta)^T X + noise
  double noise_var = 1.0;
  double slope1 = 1.0;      // contribution regression group slopes
  double slope2 = 3.0;
  double c = 1.0;

  // csv
  std::string data_path;
};

struct ContaminationConfig {
  double epsilon = 0.0;
  double mean = 20.0;
  double std = 1.0;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::ProFL;
  double eta = 0.01;
  std::size_t H = 5;
  std::size_t R = 1;
  std::size_t T = 100;
  std::size_t num_clients = 1;
  double enrollment_fraction = 1.0;
  Vector alpha;  // empty => uniform
  std::uint64_t seed = 0;
  SampleSizeMode sample_size = FixedSampleSize{};
  std::optional<RobustFilterConfig> robust_filter;
  /// client -> cluster id; set => server-side Jacobian estimation.
  std::optional<std::vector<std::size_t>> server_jacobian;
  ParameterBox projection;
  double ridge = 0.0;
  Vector theta0;
  std::size_t n_eval = 2000;
  double rank_tol = 0.0;  // 0 => 1e-10 * max(rows, cols)
  EnvironmentConfig environment;
  ContaminationConfig contamination;

  std::size_t dim() const { return environment.dim; }
  /// Uniform weights when alpha is empty.
  Vector weights() const;
  /// Throws ConfigError on inconsistencies; returns human-readable warnings.
  std::vector<std::string> validate() const;
};

/// Componentwise clamp of theta into the box.
ModelVector project(std::span<const double> theta, const ParameterBox& box);

/// Sum of w_i * models_i with weights renormalized to sum to one.
ModelVector weighted_aggregate(std::span<const ModelVector> models, std::span<const double> weights);

/// Uniform subset of size ceil(fraction * N), sorted, deterministic in
/// (seed, t). Off-round iterations (t mod R != 0) return `previous`.
std::vector<std::size_t> select_enrolled(std::size_t t, const ExperimentConfig& cfg,
                                         std::span<const std::size_t> previous = {});

// small vector helpers
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vector linspace_clients(double lo, double hi, std::size_t n);

}  // namespace perffl
