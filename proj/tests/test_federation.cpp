#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "perffl/federation.hpp"

using namespace perffl;

namespace {

ExperimentConfig pricing(Algorithm a, std::size_t N = 1) {
  ExperimentConfig c;
  c.algorithm = a;
  c.num_clients = N;
  c.eta = 0.01;
  c.H = 3;
  c.R = 1;
  c.T = 300;
  c.sample_size = FixedSampleSize{2000};
  c.projection = ParameterBox::uniform(1, 0.0, 5.0);
  c.theta0 = {0.5};
  c.environment.kind = EnvironmentKind::GaussianDemandPricing;
  c.environment.mu0_low = c.environment.mu0_high = 6.0;
  c.environment.gamma_low = c.environment.gamma_high = 2.0;
  c.environment.sigma = 1.0;
  if (a == Algorithm::ProFL) c.robust_filter = RobustFilterConfig{};
  return c;
}

bool bit_identical(const RunTrace& a, const RunTrace& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t t = 0; t < a.rows.size(); ++t) {
    const auto &x = a.rows[t], &y = b.rows[t];
    if (x.t != y.t || x.loss != y.loss || x.theta != y.theta || x.n_total != y.n_total ||
        x.removed_total != y.removed_total || x.enrolled != y.enrolled || x.client_n != y.client_n)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("trace layout") {
  ExperimentConfig c = pricing(Algorithm::ProFL, 4);
  c.R = 3;
  c.T = 20;
  c.sample_size = FixedSampleSize{100};
  const RunTrace tr = run_experiment(c);
  REQUIRE(tr.rows.size() == c.T + 1);
  CHECK(tr.rows[0].n_total == 0);
  CHECK(tr.rows[0].removed_total == 0);
  CHECK(tr.rows[0].theta == Vector{0.5});
  for (std::size_t t = 1; t < tr.rows.size(); ++t) {
    const TraceRow& r = tr.rows[t];
    CHECK(r.t == t);
    CHECK(r.enrolled == 4);
    CHECK(r.n_total == 400);
    CHECK(std::accumulate(r.client_n.begin(), r.client_n.end(), std::size_t{0}) == r.n_total);
    CHECK(c.projection.contains(r.theta));
    // the global model moves only at aggregation
    if (t % c.R != 0) {
      CHECK(r.theta == tr.rows[t - 1].theta);
      CHECK(r.loss == tr.rows[t - 1].loss);
    }
  }
  CHECK(tr.rows[3].theta != tr.rows[0].theta);
  CHECK(tr.total_samples() == 400 * c.T);
}

TEST_CASE("runs are bit-deterministic") {
  for (Algorithm a : {Algorithm::ProFL, Algorithm::PoFL, Algorithm::PFL, Algorithm::CentralizedPG}) {
    ExperimentConfig c = pricing(a, 3);
    c.T = 60;
    c.environment.gamma_low = 1.0;
    c.environment.gamma_high = 3.0;
    c.contamination.epsilon = 0.1;
    c.enrollment_fraction = a == Algorithm::CentralizedPG ? 1.0 : 0.67;
    c.R = a == Algorithm::CentralizedPG ? 1 : 2;
    const RunTrace x = run_experiment(c), y = run_experiment(c);
    CHECK(bit_identical(x, y));
    CHECK(same_trajectory(x, y));
    c.seed = 1;
    CHECK_FALSE(bit_identical(x, run_experiment(c)));
  }
}

TEST_CASE("ProFL finds the performative optimum and PFL the stable point") {
  // single runs scatter around the optimum because the finite-difference
  // Jacobian is noisy once steps become small; the seed average is checked.
  // A small C keeps the filter off the tails of clean Gaussian data.
  ExperimentConfig c = pricing(Algorithm::ProFL);
  c.T = 2000;
  c.H = 30;
  c.robust_filter->C = 0.0005;
  c.sample_size = FixedSampleSize{5000};
  double po = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    c.seed = seed;
    po += run_experiment(c).final_row().theta[0] / 10.0;
  }
  CHECK(std::abs(po - 1.5) < 0.02 * 1.5);

  c.algorithm = Algorithm::PFL;
  c.robust_filter.reset();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    c.seed = seed;
    CHECK(std::abs(run_experiment(c).final_row().theta[0] - 3.0) < 0.02 * 3.0);
  }
}

TEST_CASE("warm-up steps use the first gradient term only") {
  ExperimentConfig c = pricing(Algorithm::PoFL);
  c.H = 4;
  c.T = 12;
  std::vector<IterationInfo> seen;
  RunOptions opts;
  opts.observer = [&](const IterationInfo& i) { seen.push_back(i); };
  run_experiment(c, opts);
  REQUIRE(seen.size() == c.T);
  for (const auto& i : seen) CHECK(i.used_jacobian == (i.t > c.H));
}

TEST_CASE("projection keeps the model in the box") {
  ExperimentConfig c = pricing(Algorithm::ProFL, 2);
  c.projection = ParameterBox::uniform(1, 0.0, 1.0);
  c.T = 200;
  const RunTrace tr = run_experiment(c);
  for (const auto& r : tr.rows) CHECK(c.projection.contains(r.theta));
  // the unconstrained optimum 1.5 lies outside, so the model ends on the face
  CHECK(tr.final_row().theta[0] == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("one client with R = 1 tracks the local model") {
  ExperimentConfig c = pricing(Algorithm::PoFL);
  c.T = 40;
  c.H = 2;
  // hand-rolled loop: the same streams, the same estimators
  auto clients = make_clients(c);
  const Environment& env = *clients[0].env;
  ModelVector theta = initial_theta(c);
  HistoryWindow w(c.H);
  const RunTrace tr = run_experiment(c);
  for (std::size_t t = 0; t < c.T; ++t) {
    Rng s(c.seed, 0, "sample", t), k(c.seed, 0, "coin", t);
    const SampleBatch b = draw_batch(clients[0], theta, clients[0].n, s, k);
    const L1Estimate l1 = grad_l1(b, theta, env);
    const Vector fh = estimate_f_hat(env, b);
    w.push(theta, fh);
    Vector g = l1.g1;
    if (t > c.H) {
      const JacobianEstimate j = fd_jacobian(w);
      if (j.usable()) axpy(1.0, grad_l2(b, theta, env, j.matrix, fh), g);
    }
    axpy(-c.eta, g, theta);
    theta = project(theta, c.projection);
    CHECK(tr.rows[t + 1].theta[0] == doctest::Approx(theta[0]).epsilon(1e-12));
  }
}

TEST_CASE("centralized PG with one client equals PoFL") {
  ExperimentConfig c = pricing(Algorithm::PoFL);
  c.T = 100;
  c.contamination.epsilon = 0.1;
  const RunTrace pofl = run_experiment(c);
  c.algorithm = Algorithm::CentralizedPG;
  CHECK(same_trajectory(pofl, run_experiment(c)));
}

TEST_CASE("without performative shift PoFL and PFL coincide on static data") {
  // gamma = 0 on a finite shard drawn in full: f_hat never changes, the
  // Jacobian is zero and PoFL reduces to federated averaging
  Dataset d;
  d.features = DenseMatrix(40, 1);
  Rng rng(3, 0, "data");
  for (std::size_t r = 0; r < 40; ++r) {
    d.labels.push_back(static_cast<int>(r % 2));
    d.features(r, 0) = (r % 2 ? -1.0 : 1.0) + rng.normal();
  }
  ExperimentConfig c;
  c.num_clients = 2;
  c.eta = 0.1;
  c.H = 2;
  c.T = 50;
  c.ridge = 0.01;
  c.projection = ParameterBox::uniform(1, -5.0, 5.0);
  c.environment.kind = EnvironmentKind::CsvStatic;
  const auto shards = shard(d, 2);
  std::vector<ContaminatedClient> clients;
  for (const auto& s : shards) {
    ContaminatedClient cc;
    cc.env = make_csv_static(s, 0.0, 0.0, c.ridge);
    cc.contaminant = std::make_shared<GaussianContaminant>(20.0, 1.0);
    cc.alpha = 0.5;
    cc.n = s.size();
    clients.push_back(cc);
  }
  c.algorithm = Algorithm::PoFL;
  const RunTrace pofl = run_experiment(c, clients);
  c.algorithm = Algorithm::PFL;
  const RunTrace pfl = run_experiment(c, clients);
  for (std::size_t t = 0; t < pfl.rows.size(); ++t) CHECK(pofl.rows[t].theta[0] == doctest::Approx(pfl.rows[t].theta[0]).epsilon(1e-12));
}

TEST_CASE("idle clients are frozen") {
  ExperimentConfig c = pricing(Algorithm::ProFL, 5);
  c.enrollment_fraction = 0.4;
  c.R = 2;
  c.T = 30;
  c.sample_size = FixedSampleSize{200};
  std::vector<std::vector<std::size_t>> active(c.T);
  RunOptions opts;
  opts.observer = [&](const IterationInfo& i) { active[i.t].push_back(i.client); };
  const RunTrace tr = run_experiment(c, opts);
  for (std::size_t t = 0; t < c.T; ++t) {
    CHECK(active[t].size() == 2);
    const auto& row = tr.rows[t + 1];
    CHECK(row.enrolled == 2);
    for (std::size_t i = 0; i < 5; ++i) {
      const bool on = std::find(active[t].begin(), active[t].end(), i) != active[t].end();
      CHECK((row.client_n[i] == 200) == on);
      CHECK((row.client_n[i] == 0) == !on);
    }
    // enrollment is constant within a round
    if (t % c.R != 0) CHECK(active[t] == active[t - 1]);
  }
}

TEST_CASE("configuration errors surface before iteration 0") {
  ExperimentConfig c = pricing(Algorithm::ProFL, 2);
  c.alpha = {0.9, 0.9};
  CHECK_THROWS_AS(run_experiment(c), ConfigError);
  c = pricing(Algorithm::ProFL, 2);
  auto clients = make_clients(c);
  clients.pop_back();
  CHECK_THROWS_AS(run_experiment(c, clients), ConfigError);
}

TEST_CASE("linear rate on the clean scalar problem") {
  ExperimentConfig c = pricing(Algorithm::ProFL);
  c.T = 150;
  c.theta0 = {0.0};
  c.sample_size = FixedSampleSize{5000};
  const RunTrace tr = run_experiment(c);
  const double po_loss = -4.5;
  std::vector<double> t, y;
  // the transient before the sampling noise floor
  for (std::size_t k = 0; k <= 60; ++k) {
    t.push_back(static_cast<double>(k));
    y.push_back(std::log(tr.rows[k].loss - po_loss));
  }
  // least-squares slope and R^2
  const double n = static_cast<double>(t.size());
  const double mt = std::accumulate(t.begin(), t.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    sxy += (t[k] - mt) * (y[k] - my);
    sxx += (t[k] - mt) * (t[k] - mt);
    syy += (y[k] - my) * (y[k] - my);
  }
  const double slope = sxy / sxx, r2 = sxy * sxy / (sxx * syy);
  CAPTURE(slope);
  CAPTURE(r2);
  CHECK(slope < 0.0);
  CHECK(r2 > 0.9);
}

TEST_CASE("ProFL beats PFL with ridge-regularized house pricing") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExperimentConfig c;
    c.num_clients = 2;
    c.eta = 0.01;
    c.H = 1;
    c.R = 5;
    c.T = 600;
    c.seed = seed;
    c.ridge = 10.0 / 3.0;
    c.sample_size = FixedSampleSize{500};
    c.projection = ParameterBox::uniform(1, -10.0, 10.0);
    c.environment.kind = EnvironmentKind::HousePricingRegression;
    c.environment.coef = 3.6;
    c.environment.noise_var = 0.1;
    c.environment.gamma_low = 1.5;
    c.environment.gamma_high = 1.8;
    c.algorithm = Algorithm::ProFL;
    c.robust_filter = RobustFilterConfig{};
    const double profl = run_experiment(c).final_row().loss;
    c.algorithm = Algorithm::PFL;
    c.robust_filter.reset();
    const double pfl = run_experiment(c).final_row().loss;
    wins += profl < pfl ? 1 : 0;
  }
  CHECK(wins >= 4);
}
