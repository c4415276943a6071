#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "perffl/estimation.hpp"
#include "perffl/federation.hpp"
#include "perffl/harness.hpp"
#include "perffl/linalg.hpp"
#include "perffl/rng.hpp"

using namespace perffl;

namespace {

// Tolerances.
constexpr double kGradientRelTol = 0.02;
constexpr double kGradientBudget = 10.0;
constexpr double kMinGradient = 2.0;
constexpr double kLinearJacobianTol = 1e-8;
constexpr double kPoPsBand = 0.02;
constexpr double kPoPsBudget = 30.0;
constexpr double kCoincidenceTol = 0.05;
constexpr double kContaminationBand = 0.05;
constexpr double kRecallMin = 0.9;
constexpr double kContaminationBudget = 300.0;
constexpr double kPooledStdMultiple = 2.0;
constexpr std::size_t kHeterogeneityWinsMin = 9;
constexpr double kAccuracyGapSame = 0.05;
constexpr double kAccuracyGapDifferent = 0.15;
constexpr double kTrendPValue = 0.05;
constexpr double kAdaptiveSampleFraction = 0.6;
constexpr std::size_t kRateWindow = 60;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;
int ran = 0;
std::vector<int> selected;  // empty => all

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  if (!selected.empty() && std::find(selected.begin(), selected.end(), id) == selected.end()) return;
  ++ran;
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, fmt::format("exception: {}", e.what())};
  }
  if (!o.pass) ++failures;
  std::printf("criterion %d %s: %s (%s)\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "perffl-acceptance" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

PresetResult run(const std::string& preset, PresetRunOptions opts = {}) {
  opts.out_dir = scratch(preset);
  return run_preset(preset, opts);
}

std::vector<double> final_theta(const PresetResult& r, const std::string& sweep, const std::string& series) {
  std::vector<double> out;
  for (const CellResult* c : r.select(sweep, series)) out.push_back(c->trace.final_row().theta[0]);
  return out;
}

ContaminatedClient clean_client(std::shared_ptr<const Environment> env) {
  ContaminatedClient c;
  c.env = std::move(env);
  c.contaminant = std::make_shared<GaussianContaminant>(20.0, 1.0);
  return c;
}

Outcome gradient_oracle() {
  const auto start = Clock::now();
  Rng rng(2024, 0, "acceptance-gradient");
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    double mu0 = 0.0, gamma = 0.0, theta = 0.0;
    // relative error is ill-conditioned next to the stationary point
    do {
      mu0 = 6.0 + rng.uniform(), gamma = 1.0 + 2.0 * rng.uniform(), theta = 5.0 * rng.uniform();
    } while (std::abs(-mu0 + 2.0 * gamma * theta) < kMinGradient);
    const auto env = make_gaussian_demand_pricing(1, mu0, gamma, 1.0);
    const Vector th{theta};
    Rng s(2024, trial, "sample"), c(2024, trial, "coin");
    const SampleBatch b = draw_batch(clean_client(env), th, 100000, s, c);
    const L1Estimate l1 = grad_l1(b, th, *env);
    const Vector l2 = grad_l2(b, th, *env, *env->analytic_jacobian(th), estimate_f_hat(*env, b));
    const double truth = -mu0 + 2.0 * gamma * theta;
    worst = std::max(worst, std::abs(l1.g1[0] + l2[0] - truth) / std::abs(truth));
  }
  const double secs = seconds_since(start);
  return {worst < kGradientRelTol && secs < kGradientBudget,
          fmt::format("worst relative error {:.4f}, {:.2f} s", worst, secs)};
}

Outcome linear_jacobian() {
  Rng rng(2024, 0, "acceptance-linear");
  double worst = 0.0;
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng.below(4), m = 1 + rng.below(4), H = d + 2;
    DenseMatrix A(m, d);
    for (double& a : A.data()) a = rng.normal();
    HistoryWindow w(H);
    for (std::size_t k = 0; k <= H; ++k) {
      Vector th(d);
      for (double& x : th) x = rng.normal();
      w.push(th, A.apply(th));
    }
    const double err = (fd_jacobian(w).matrix - A).max_abs();
    worst = std::max(worst, err);
    if (err < kLinearJacobianTol) ++exact;
  }
  return {exact == 100, fmt::format("{}/100 within 1e-8, worst {:.2e}", exact, worst)};
}

Outcome po_vs_ps() {
  const auto start = Clock::now();
  const PresetResult r = run("pricing-po-vs-ps");
  const double secs = seconds_since(start);
  const auto po = final_theta(r, "-", "ProFL"), ps = final_theta(r, "-", "PFL");
  const auto lpo = r.metrics("-", "ProFL"), lps = r.metrics("-", "PFL");
  std::size_t po_ok = 0, ps_ok = 0, order_ok = 0;
  double worst_po = 0.0, worst_ps = 0.0;
  for (std::size_t k = 0; k < po.size(); ++k) {
    const double e_po = std::abs(po[k] - 1.5) / 1.5, e_ps = std::abs(ps[k] - 3.0) / 3.0;
    worst_po = std::max(worst_po, e_po);
    worst_ps = std::max(worst_ps, e_ps);
    po_ok += e_po < kPoPsBand;
    ps_ok += e_ps < kPoPsBand;
    order_ok += lpo[k] < lps[k];
  }
  const std::size_t n = po.size();
  return {n == 10 && po_ok == n && ps_ok == n && order_ok == n && secs < kPoPsBudget,
          fmt::format("ProFL {}/{} (worst {:.4f}), PFL {}/{} (worst {:.4f}), loss order {}/{}, {:.1f} s", po_ok, n,
                      worst_po, ps_ok, n, worst_ps, order_ok, n, secs)};
}

Outcome coincidence() {
  const PresetResult r = run("fig5a-contribution");
  const auto a = final_theta(r, "-", "ProFL"), b = final_theta(r, "-", "PFL");
  std::size_t ok = 0;
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double gap = std::abs(a[k] - b[k]);
    worst = std::max(worst, gap);
    ok += gap < kCoincidenceTol;
  }
  return {ok == a.size() && !a.empty(), fmt::format("{}/{} seeds within 0.05, worst gap {:.4f}", ok, a.size(), worst)};
}

double planted_recall() {
  const auto env = make_gaussian_demand_pricing(1, 6.0, 2.0, 1.0);
  ContaminatedClient cc = clean_client(env);
  cc.epsilon = 0.2;
  std::size_t planted = 0, caught = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const Vector th{0.5 + 0.2 * static_cast<double>(trial)};
    Rng s(77, trial, "sample"), c(77, trial, "coin");
    const SampleBatch b = draw_batch(cc, th, 500, s, c);
    const RobustResult rr = robust_gradient(b, th, *env, 0.002, 0.01, 20);
    std::size_t k = 0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const bool kept = k < rr.kept.size() && rr.kept[k] == j;
      if (kept) ++k;
      if (ContaminationOracle::is_contaminant(b, j)) {
        ++planted;
        caught += !kept;
      }
    }
  }
  return planted ? static_cast<double>(caught) / static_cast<double>(planted) : 0.0;
}

Outcome contamination() {
  const auto start = Clock::now();
  PresetRunOptions opts;
  opts.only_sweep = {"epsilon=0", "epsilon=0.2"};
  const PresetResult r = run("fig1a-contamination", opts);
  const double secs = seconds_since(start);
  const auto& s = r.summary;
  const double f0 = s.at("epsilon=0", "ProFL-filter").mean, f2 = s.at("epsilon=0.2", "ProFL-filter").mean;
  const double p0 = s.at("epsilon=0", "PoFL").mean, p2 = s.at("epsilon=0.2", "PoFL").mean;
  const double dev_f = std::abs(f2 - f0) / std::abs(f0), dev_p = std::abs(p2 - p0) / std::abs(p0);
  const double recall = planted_recall();
  return {dev_f < kContaminationBand && dev_p > kContaminationBand && recall >= kRecallMin &&
              secs < kContaminationBudget,
          fmt::format("ProFL-filter shift {:.4f}, PoFL shift {:.4f}, recall {:.3f}, {:.1f} s", dev_f, dev_p, recall,
                      secs)};
}

Outcome heterogeneity() {
  PresetRunOptions opts;
  opts.only_sweep = {"alpha=0", "alpha=0.5"};
  const PresetResult r = run("table-pricing-loss", opts);
  const SummaryRow &a = r.summary.at("alpha=0", "ProFL"), &b = r.summary.at("alpha=0", "PG");
  const double pooled = std::sqrt(0.5 * (a.std * a.std + b.std * b.std));
  const bool close = std::abs(a.mean - b.mean) <= kPooledStdMultiple * pooled;
  const auto pro = r.metrics("alpha=0.5", "ProFL"), pg = r.metrics("alpha=0.5", "PG");
  std::size_t wins = 0;
  for (std::size_t k = 0; k < pro.size(); ++k) wins += pro[k] < pg[k];
  return {close && wins >= kHeterogeneityWinsMin,
          fmt::format("alpha=0 gap {:.4f} vs 2 pooled std {:.4f}; alpha=0.5 ProFL wins {}/{}", std::abs(a.mean - b.mean),
                      kPooledStdMultiple * pooled, wins, pro.size())};
}

Outcome classification() {
  PresetRunOptions opts;
  opts.only_series = {"ProFL", "PFL"};
  const PresetResult same = run("table-accuracy-same", opts);
  const PresetResult diff = run("table-accuracy-different", opts);
  const double g_same = same.summary.at("-", "ProFL").mean - same.summary.at("-", "PFL").mean;
  const double g_diff = diff.summary.at("-", "ProFL").mean - diff.summary.at("-", "PFL").mean;
  return {g_same >= kAccuracyGapSame && g_diff >= kAccuracyGapDifferent,
          fmt::format("same gap {:.4f}, different gap {:.4f}", g_same, g_diff)};
}

Outcome monotonicity() {
  // sample size: per-seed squared deviation from its group mean against n
  const PresetResult rn = run("fig2a-sample-sizes");
  std::vector<double> xn, yn, var_n;
  for (double n : {50.0, 500.0, 5000.0}) {
    const auto m = rn.metrics(fmt::format("n={}", n), "ProFL");
    const double mu = mean(m);
    var_n.push_back(sample_std(m) * sample_std(m));
    for (double v : m) {
      xn.push_back(n);
      yn.push_back((v - mu) * (v - mu));
    }
  }
  const SpearmanResult sn = spearman(xn, yn);
  const bool var_ok = var_n[0] >= var_n[1] && var_n[1] >= var_n[2] && sn.rho < 0.0 && sn.p_value < kTrendPValue;

  // learning rate: per-seed distance to the performative optimum against eta
  const PresetResult re = run("fig2b-learning-rates");
  const ModelVector po = reference_optimum(find_preset("fig2b-learning-rates").base);
  std::vector<double> xe, ye, dist_e;
  for (double eta : {0.03, 0.01, 0.001}) {
    std::vector<double> d;
    for (const CellResult* c : re.select(fmt::format("eta={}", eta), "ProFL"))
      d.push_back(std::abs(c->trace.final_row().theta[0] - po[0]));
    dist_e.push_back(mean(d));
    for (double v : d) {
      xe.push_back(eta);
      ye.push_back(v);
    }
  }
  const SpearmanResult se = spearman(xe, ye);
  const bool dist_ok =
      dist_e[0] >= dist_e[1] && dist_e[1] >= dist_e[2] && se.rho > 0.0 && se.p_value < kTrendPValue;
  return {var_ok && dist_ok,
          fmt::format("variance {:.3g}/{:.3g}/{:.3g} (rho {:.3f}, p {:.3g}); distance {:.4f}/{:.4f}/{:.4f} "
                      "(rho {:.3f}, p {:.3g})",
                      var_n[0], var_n[1], var_n[2], sn.rho, sn.p_value, dist_e[0], dist_e[1], dist_e[2], se.rho,
                      se.p_value)};
}

ExperimentConfig clean_pricing() {
  ExperimentConfig c;
  c.algorithm = Algorithm::ProFL;
  c.eta = 0.01;
  c.H = 3;
  c.R = 1;
  c.T = 150;
  c.sample_size = FixedSampleSize{5000};
  c.projection = ParameterBox::uniform(1, 0.0, 5.0);
  c.theta0 = {0.0};
  c.environment.kind = EnvironmentKind::GaussianDemandPricing;
  c.environment.mu0_low = c.environment.mu0_high = 6.0;
  c.environment.gamma_low = c.environment.gamma_high = 2.0;
  c.environment.sigma = 1.0;
  return c;
}

Outcome properties() {
  Rng rng(2024, 0, "acceptance-properties");
  std::vector<std::string> broken;

  // projection is idempotent and lands in the box
  bool proj = true;
  for (int k = 0; k < 200; ++k) {
    const ParameterBox box = ParameterBox::uniform(3, -1.0, 2.0);
    const Vector th{5.0 * rng.normal(), 5.0 * rng.normal(), 5.0 * rng.normal()};
    const ModelVector p = project(th, box);
    proj = proj && project(p, box) == p;
    for (double x : p) proj = proj && x >= -1.0 && x <= 2.0;
  }
  if (!proj) broken.push_back("projection");

  // aggregating identical models returns the model; weights are renormalized
  bool agg = true;
  for (int k = 0; k < 100; ++k) {
    const ModelVector m{rng.normal(), rng.normal()};
    const std::vector<ModelVector> same(4, m);
    const Vector w{rng.uniform() + 0.1, rng.uniform() + 0.1, rng.uniform() + 0.1, rng.uniform() + 0.1};
    const ModelVector a = weighted_aggregate(same, w);
    agg = agg && std::abs(a[0] - m[0]) < 1e-12 && std::abs(a[1] - m[1]) < 1e-12;
    const std::vector<ModelVector> two{{0.0}, {1.0}};
    agg = agg && std::abs(weighted_aggregate(two, Vector{3.0, 1.0})[0] - 0.25) < 1e-12;
  }
  if (!agg) broken.push_back("aggregation");

  // Moore-Penrose identities, including rank-deficient inputs
  double penrose = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t m = 1 + rng.below(5), n = 1 + rng.below(5);
    DenseMatrix A(m, n);
    for (double& a : A.data()) a = rng.normal();
    if (m > 1 && k % 2) std::copy(A.row(0).begin(), A.row(0).end(), A.row(1).begin());
    const DenseMatrix P = pseudo_inverse(A);
    const double scale = std::max(1.0, A.max_abs() * P.max_abs());
    penrose = std::max({penrose, (A * P * A - A).max_abs() / scale, (P * A * P - P).max_abs() / scale,
                        ((A * P).transpose() - A * P).max_abs() / scale,
                        ((P * A).transpose() - P * A).max_abs() / scale});
  }
  if (penrose > 1e-9) broken.push_back("penrose");

  // outlier scores do not depend on the sign of the gradients
  bool tau = true;
  for (int k = 0; k < 50; ++k) {
    DenseMatrix G(20, 3);
    for (double& g : G.data()) g = rng.normal();
    const Vector a = outlier_scores(G), b = outlier_scores(-1.0 * G);
    for (std::size_t j = 0; j < a.size(); ++j) tau = tau && std::abs(a[j] - b[j]) <= 1e-10 * (1.0 + a[j]);
  }
  if (!tau) broken.push_back("tau sign");

  // group fractions are a distribution on a theta grid
  bool nu = true;
  const auto cp = make_contribution_pricing(1, {-1.0, 3.0}, 1.0, 1.0, 0.1);
  const auto al = make_appendix_linear_contribution(0.5, -0.5, 0.25);
  for (int k = 0; k <= 200; ++k) {
    const Vector th{-10.0 + 0.1 * k};
    for (const auto* env : {cp.get(), al.get()}) {
      double sum = 0.0;
      for (double x : env->f(th)) {
        nu = nu && x >= 0.0;
        sum += x;
      }
      nu = nu && std::abs(sum - 1.0) < 1e-12;
    }
  }
  if (!nu) broken.push_back("nu normalization");

  // two identical runs give bit-identical traces
  ExperimentConfig det = clean_pricing();
  det.num_clients = 3;
  det.R = 2;
  det.T = 60;
  det.sample_size = FixedSampleSize{300};
  det.robust_filter = RobustFilterConfig{};
  if (!same_trajectory(run_experiment(det), run_experiment(det))) broken.push_back("determinism");

  // the optimality gap decays linearly until it reaches the sampling noise floor
  const ExperimentConfig lin = clean_pricing();
  const RunTrace tr = run_experiment(lin);
  std::vector<double> t, y;
  for (std::size_t k = 0; k <= kRateWindow; ++k) {
    t.push_back(static_cast<double>(k));
    y.push_back(std::log(tr.rows[k].loss + 4.5));
  }
  const LineFit fit = fit_line(t, y);
  if (!(fit.slope < 0.0 && fit.r2 > 0.9)) broken.push_back("linear rate");

  std::string detail = fmt::format("penrose residual {:.1e}, rate slope {:.4f} r2 {:.3f}", penrose, fit.slope, fit.r2);
  for (const auto& b : broken) detail += ", broken: " + b;
  return {broken.empty(), detail};
}

Outcome adaptive() {
  const PresetResult r = run("fig1c-adaptive");
  const SummaryRow& fixed = r.summary.at("-", "fixed-1000");
  bool ok = true;
  std::string detail;
  for (const auto& [series, Phi] : {std::pair<std::string, double>{"adaptive-0.05", 0.05}, {"adaptive-0.1", 0.1}}) {
    const SummaryRow& a = r.summary.at("-", series);
    const double gap = std::abs(a.mean - fixed.mean), frac = a.samples_mean / fixed.samples_mean;
    ok = ok && gap <= Phi && frac < kAdaptiveSampleFraction;
    detail += fmt::format("{}{}: loss gap {:.4f}, samples {:.3f} of fixed", detail.empty() ? "" : "; ", series, gap,
                          frac);
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  for (int k = 1; k < argc; ++k) selected.push_back(std::atoi(argv[k]));
  report(1, "performative gradient oracle", gradient_oracle);
  report(2, "linear finite-difference Jacobian", linear_jacobian);
  report(3, "PO vs PS separation", po_vs_ps);
  report(4, "coincident optima", coincidence);
  report(5, "contamination robustness", contamination);
  report(6, "heterogeneity ordering", heterogeneity);
  report(7, "classification ordering", classification);
  report(8, "hyperparameter monotonicity", monotonicity);
  report(9, "property suites", properties);
  report(10, "adaptive sizing", adaptive);
  std::printf("%d of %d criteria failed\n", failures, ran);
  return failures == 0 ? 0 : 1;
}
