#include "perffl/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "perffl/rng.hpp"

namespace perffl {

ParameterBox ParameterBox::uniform(std::size_t dim, double lo, double hi) {
  ParameterBox box{Vector(dim, lo), Vector(dim, hi)};
  box.validate();
  return box;
}

bool ParameterBox::contains(std::span<const double> theta) const {
  if (theta.size() != dim()) return false;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    if (theta[j] < lower[j] || theta[j] > upper[j]) return false;
  }
  return true;
}

void ParameterBox::validate() const {
  if (lower.size() != upper.size()) throw ConfigError("parameter box: lower/upper length mismatch");
  if (lower.empty()) throw ConfigError("parameter box: zero dimension");
  for (std::size_t j = 0; j < lower.size(); ++j) {
    if (!std::isfinite(lower[j]) || !std::isfinite(upper[j]))
      throw ConfigError("parameter box: non-finite bound at coordinate " + std::to_string(j));
    if (lower[j] > upper[j])
      throw ConfigError("parameter box: lower > upper at coordinate " + std::to_string(j));
  }
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ProFL: return "ProFL";
    case Algorithm::PoFL: return "PoFL";
    case Algorithm::PFL: return "PFL";
    case Algorithm::CentralizedPG: return "PG";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "ProFL" || s == "profl") return Algorithm::ProFL;
  if (s == "PoFL" || s == "pofl") return Algorithm::PoFL;
  if (s == "PFL" || s == "pfl") return Algorithm::PFL;
  if (s == "PG" || s == "pg" || s == "CentralizedPG" || s == "centralized_pg")
    return Algorithm::CentralizedPG;
  throw ConfigError("unknown algorithm '" + s + "' (expected ProFL, PoFL, PFL, PG)");
}

namespace {
struct KindName {
  EnvironmentKind kind;
  const char* name;
};
constexpr KindName kKindNames[] = {
    {EnvironmentKind::GaussianDemandPricing, "gaussian_demand_pricing"},
    {EnvironmentKind::ContributionPricing, "contribution_pricing"},
    {EnvironmentKind::StrategicClassification, "strategic_classification"},
    {EnvironmentKind::HousePricingRegression, "house_pricing_regression"},
    {EnvironmentKind::ContributionRegression, "contribution_regression"},
    {EnvironmentKind::AppendixLinearContribution, "appendix_linear_contribution"},
    {EnvironmentKind::CsvStatic, "csv_static"},
};
}  // namespace

std::string to_string(EnvironmentKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

EnvironmentKind environment_kind_from_string(const std::string& s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  throw ConfigError("unknown environment kind '" + s + "'");
}

Vector ExperimentConfig::weights() const {
  if (alpha.empty()) return Vector(num_clients, 1.0 / static_cast<double>(num_clients));
  return alpha;
}

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> warnings;
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(eta > 0.0) || !std::isfinite(eta)) fail("eta must be positive");
  if (H < 1) fail("H must be >= 1");
  if (R < 1) fail("R must be >= 1");
  if (T < 1) fail("T must be >= 1");
  if (num_clients < 1) fail("num_clients must be >= 1");
  if (!(enrollment_fraction > 0.0 && enrollment_fraction <= 1.0))
    fail("enrollment_fraction must be in (0, 1]");
  if (environment.dim < 1) fail("environment.dim must be >= 1");
  if (!alpha.empty()) {
    if (alpha.size() != num_clients) fail("alpha length must equal num_clients");
    double s = 0.0;
    for (double a : alpha) {
      if (!(a >= 0.0)) fail("alpha entries must be nonnegative");
      s += a;
    }
    if (std::abs(s - 1.0) > 1e-12) fail("alpha must sum to 1");
  }
  projection.validate();
  if (projection.dim() != dim()) fail("projection box dimension must equal environment.dim");
  if (!theta0.empty() && theta0.size() != dim()) fail("theta0 dimension must equal environment.dim");
  if (!(ridge >= 0.0)) fail("ridge must be >= 0");
  if (!(rank_tol >= 0.0)) fail("rank_tol must be >= 0");
  if (n_eval < 1) fail("n_eval must be >= 1");
  if (contamination.epsilon < 0.0 || contamination.epsilon > 1.0)
    fail("contamination.epsilon must be in [0, 1]");
  if (!(contamination.std >= 0.0)) fail("contamination.std must be >= 0");

  if (const auto* fixed = std::get_if<FixedSampleSize>(&sample_size)) {
    if (fixed->n < 1) fail("sample_size.n must be >= 1");
  } else {
    const auto& ad = std::get<AdaptiveSampleSize>(sample_size);
    if (ad.n_min < 1 || ad.n_min > ad.n_max) fail("adaptive sample size needs 1 <= n_min <= n_max");
    if (!(ad.phi > 0.0 && ad.phi < 1.0)) fail("adaptive phi must be in (0, 1)");
    if (!(ad.Phi > 0.0)) fail("adaptive Phi must be positive");
    if (algorithm != Algorithm::ProFL) warnings.emplace_back("adaptive sample size is only used by ProFL");
  }
  if (robust_filter) {
    const auto& rf = *robust_filter;
    if (!(rf.C > 0.0 && rf.C < 1.0)) fail("robust_filter.C must be in (0, 1)");
    if (!(rf.J > 0.0 && rf.J < 1.0)) fail("robust_filter.J must be in (0, 1)");
    if (rf.B < 2) fail("robust_filter.B must be >= 2");
    if (algorithm != Algorithm::ProFL) warnings.emplace_back("robust filter is only used by ProFL");
  } else if (algorithm == Algorithm::ProFL && contamination.epsilon > 0.0) {
    warnings.emplace_back("ProFL without robust_filter on contaminated data");
  }
  if (server_jacobian) {
    if (server_jacobian->size() != num_clients) fail("server_jacobian needs one cluster id per client");
    if (algorithm != Algorithm::ProFL) warnings.emplace_back("server_jacobian is only used by ProFL");
  }
  const bool uses_l2 = algorithm != Algorithm::PFL;
  if (uses_l2 && H <= dim())
    warnings.emplace_back("H <= dim: finite-difference matrix may be singular");
  if (T % R != 0)
    warnings.emplace_back("T is not a multiple of R: the final aggregation happens at t = " +
                          std::to_string(T - T % R));
  return warnings;
}

ModelVector project(std::span<const double> theta, const ParameterBox& box) {
  if (theta.size() != box.dim())
    throw ConfigError("project: theta has length " + std::to_string(theta.size()) + ", box has " +
                      std::to_string(box.dim()));
  ModelVector out(theta.begin(), theta.end());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::clamp(out[j], box.lower[j], box.upper[j]);
  return out;
}

ModelVector weighted_aggregate(std::span<const ModelVector> models, std::span<const double> weights) {
  if (models.empty()) throw RunError("weighted_aggregate: empty enrolled set");
  if (models.size() != weights.size()) throw RunError("weighted_aggregate: models/weights length mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw RunError("weighted_aggregate: negative weight");
    total += w;
  }
  if (!(total > 0.0)) throw RunError("weighted_aggregate: weights sum to zero");
  const std::size_t d = models.front().size();
  ModelVector out(d, 0.0);
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].size() != d) throw RunError("weighted_aggregate: model dimension mismatch");
    axpy(weights[i] / total, models[i], out);
  }
  return out;
}

std::vector<std::size_t> select_enrolled(std::size_t t, const ExperimentConfig& cfg,
                                         std::span<const std::size_t> previous) {
  if (t % cfg.R != 0 && !previous.empty()) return {previous.begin(), previous.end()};
  const std::size_t n = cfg.num_clients;
  const auto k = static_cast<std::size_t>(
      std::ceil(cfg.enrollment_fraction * static_cast<double>(n) - 1e-12));
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  if (k >= n) return ids;
  Rng rng(cfg.seed, kServerStream, "enroll", t);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t j = 0; j < x.size(); ++j) y[j] += alpha * x[j];
}

Vector linspace_clients(double lo, double hi, std::size_t n) {
  Vector v(n, lo);
  if (n == 1) {
    v[0] = 0.5 * (lo + hi);
    return v;
  }
  for (std::size_t i = 0; i < n; ++i)
    v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

}  // namespace perffl
