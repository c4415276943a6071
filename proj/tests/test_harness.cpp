#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "perffl/config_io.hpp"
#include "perffl/environments.hpp"
#include "perffl/harness.hpp"

using namespace perffl;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "perffl-tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Two-sided tail of Student's t by Simpson integration of the density.
double t_two_sided(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  const auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const double a = 0.0, b = std::abs(t);
  const int n = 20000;
  const double h = (b - a) / n;
  double s = pdf(a) + pdf(b);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * pdf(a + k * h);
  return 1.0 - 2.0 * s * h / 3.0;
}

}  // namespace

TEST_CASE("preset catalogue") {
  const auto names = preset_names();
  CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
  for (const char* required : {"table-pricing-loss", "fig1a-contamination", "fig2b-learning-rates",
                               "fig5a-contribution", "appendix-fedavg-equivalence"})
    CHECK(std::find(names.begin(), names.end(), required) != names.end());

  for (const auto& p : presets()) {
    CAPTURE(p.name);
    CHECK(p.seeds.size() == 10);
    CHECK_FALSE(p.series.empty());
    const auto sweep = p.sweep.empty() ? std::vector<OverrideSet>{{"-", {}}} : p.sweep;
    for (const auto& s : sweep)
      for (const auto& a : p.series) CHECK_NOTHROW(cell_config(p, s, a, {}, 0));
  }
}

TEST_CASE("unknown presets are usage errors that list the catalogue") {
  try {
    find_preset("no-such-preset");
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    for (const auto& n : preset_names()) CHECK(msg.find(n) != std::string::npos);
  }
  CHECK_THROWS_AS(run_preset("no-such-preset"), UsageError);
}

TEST_CASE("cell_config applies overrides in order") {
  const ExperimentPreset& p = find_preset("fig2b-learning-rates");
  const OverrideSet series{"x", {"eta=0.5"}};
  const std::vector<std::string> user{"eta=0.25", "T=7"};
  const ExperimentConfig c = cell_config(p, p.sweep.front(), series, user, 3);
  CHECK(c.eta == 0.25);
  CHECK(c.T == 7);
  CHECK(c.seed == 3);
  CHECK(cell_config(p, p.sweep.front(), series, {}, 0).eta == 0.5);
  CHECK_THROWS_AS(cell_config(p, p.sweep.front(), series, std::vector<std::string>{"bogus=1"}, 0), ConfigError);
}

TEST_CASE("statistics helpers") {
  const Vector x{1, 2, 3, 4};
  CHECK(mean(x) == doctest::Approx(2.5));
  CHECK(sample_std(x) == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(sample_std(Vector{3.0}) == 0.0);

  // 1 - 6 sum d^2 / (n (n^2 - 1)) with d = {-1, 1, -1, 1, 0}
  const SpearmanResult s = spearman(Vector{1, 2, 3, 4, 5}, Vector{2, 1, 4, 3, 5});
  CHECK(s.rho == doctest::Approx(1.0 - 6.0 * 4.0 / (5.0 * 24.0)));
  const double t = s.rho * std::sqrt(3.0 / (1.0 - s.rho * s.rho));
  CHECK(s.p_value == doctest::Approx(t_two_sided(t, 3.0)).epsilon(1e-6));

  // ties get average ranks: x ranks {1, 2.5, 2.5, 4}
  CHECK(spearman(Vector{1, 2, 2, 3}, Vector{1, 2, 3, 4}).rho == doctest::Approx(4.5 / std::sqrt(22.5)));
  const SpearmanResult perfect = spearman(Vector{1, 2, 3, 4, 5, 6}, Vector{-1, -4, -9, -16, -25, -36});
  CHECK(perfect.rho == doctest::Approx(-1.0));
  CHECK(perfect.p_value < 1e-6);

  const LineFit f = fit_line(Vector{0, 1, 2, 3}, Vector{1, 3, 5, 7});
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.r2 == doctest::Approx(1.0));
}

TEST_CASE("convergence iteration") {
  RunTrace tr;
  const double losses[] = {10.0, 5.0, 2.0, 1.005, 1.02, 1.0};
  for (std::size_t t = 0; t < 6; ++t) {
    TraceRow r;
    r.t = t;
    r.loss = losses[t];
    r.theta = {0.0};
    tr.rows.push_back(r);
  }
  CHECK(convergence_iteration(tr) == 3);
}

TEST_CASE("summary csv round trip") {
  SummaryReport r;
  r.rows.push_back({"p", "eta=0.01", "ProFL", "loss", 10, -4.25, 0.125, 37.5, 1e6});
  r.rows.push_back({"p", "-", "PFL", "accuracy", 3, 0.875, 1.0 / 3.0, 2.0, 5e5});
  std::stringstream ss;
  r.write_csv(ss);
  const SummaryReport back = SummaryReport::read_csv(ss);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.at("-", "PFL").std == 1.0 / 3.0);
  CHECK(back.at("eta=0.01", "ProFL").mean == -4.25);
  CHECK(back.at("eta=0.01", "ProFL").seeds == 10);
  CHECK_THROWS(back.at("nope", "PFL"));
}

TEST_CASE("run_preset writes traces that reproduce the summary") {
  const auto out = scratch("roundtrip");
  PresetRunOptions opts;
  opts.out_dir = out;
  opts.seeds = std::vector<std::uint64_t>{0, 1, 2};
  opts.overrides = {"T=60", "n=500"};
  std::size_t seen = 0;
  opts.on_cell = [&](const CellResult&) { ++seen; };
  const PresetResult res = run_preset("pricing-po-vs-ps", opts);
  CHECK(seen == 6);
  CHECK(res.cells.size() == 6);
  const auto dir = out / "pricing-po-vs-ps";
  CHECK(std::filesystem::exists(dir / "summary.csv"));
  CHECK(std::filesystem::exists(dir / "curves.csv"));
  for (const auto& c : res.cells) {
    const auto cell = dir / cell_name(c.sweep, c.series, c.seed);
    CHECK(std::filesystem::exists(cell / "trace.csv"));
    CHECK(std::filesystem::exists(cell / "config.yaml"));
    CHECK(c.trace.rows.size() == 61);
  }

  const SummaryReport disk = SummaryReport::read_csv(dir / "summary.csv");
  const SummaryReport rebuilt = summarize_directory(find_preset("pricing-po-vs-ps"), dir);
  REQUIRE(rebuilt.rows.size() == res.summary.rows.size());
  for (std::size_t k = 0; k < rebuilt.rows.size(); ++k) {
    const auto &a = res.summary.rows[k], &b = rebuilt.rows[k], &d = disk.rows[k];
    CHECK(a.series == b.series);
    CHECK(a.seeds == b.seeds);
    CHECK(a.mean == b.mean);
    CHECK(a.std == b.std);
    CHECK(a.convergence_mean == b.convergence_mean);
    CHECK(a.samples_mean == b.samples_mean);
    CHECK(a.mean == d.mean);
    CHECK(a.std == d.std);
  }

  std::ifstream curves(dir / "curves.csv");
  std::string header;
  std::getline(curves, header);
  CHECK(header == "sweep,series,t,loss_mean,loss_std,seeds");
}

TEST_CASE("accuracy summaries round trip through the trace files") {
  const auto out = scratch("accuracy");
  PresetRunOptions opts;
  opts.out_dir = out;
  opts.seeds = std::vector<std::uint64_t>{4};
  opts.overrides = {"T=30", "n=100"};
  opts.only_series = {"PFL"};
  const PresetResult res = run_preset("table-accuracy-same", opts);
  REQUIRE(res.cells.size() == 1);
  const double acc = res.cells.front().metric;
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  const SummaryReport rebuilt = summarize_directory(find_preset("table-accuracy-same"), out / "table-accuracy-same");
  REQUIRE(rebuilt.rows.size() == 1);
  CHECK(rebuilt.rows.front().mean == acc);
}

TEST_CASE("fedavg equivalence preset") {
  PresetRunOptions opts;
  opts.out_dir = scratch("fedavg");
  const PresetResult res = run_preset("appendix-fedavg-equivalence", opts);
  const SummaryRow& a = res.summary.at("-", "ProFL");
  const SummaryRow& b = res.summary.at("-", "PFL");
  CHECK(std::abs(a.mean - b.mean) < 1e-6);
  CHECK(std::abs(a.std - b.std) < 1e-6);
}

TEST_CASE("reference optimum") {
  ExperimentConfig c = find_preset("pricing-po-vs-ps").base;
  CHECK(reference_optimum(c)[0] == doctest::Approx(1.5));

  // contribution pricing has no closed form: compare with a dense grid of
  // -theta (nu_0 m_0 + nu_1 m_1), nu_k proportional to max(0, B - gamma theta m_k)
  ExperimentConfig cp;
  cp.num_clients = 1;
  cp.projection = ParameterBox::uniform(1, 0.0, 5.0);
  cp.environment.kind = EnvironmentKind::ContributionPricing;
  cp.environment.group_means = {-1.0, 3.0};
  cp.environment.budget = 1.0;
  cp.environment.gamma_low = cp.environment.gamma_high = 0.1;
  const auto oracle_loss = [](double th) {
    const double r0 = std::max(0.0, 1.0 + 0.1 * th), r1 = std::max(0.0, 1.0 - 0.3 * th);
    return -th * (-r0 + 3.0 * r1) / (r0 + r1);
  };
  double best = 0.0, best_val = oracle_loss(0.0);
  for (int k = 1; k <= 500000; ++k) {
    const double th = 5.0 * k / 500000.0;
    if (oracle_loss(th) < best_val) best_val = oracle_loss(th), best = th;
  }
  CHECK(reference_optimum(cp)[0] == doctest::Approx(best).epsilon(1e-4));
}

TEST_CASE("synthetic csv feeds csv presets") {
  const auto dir = scratch("synthetic");
  write_synthetic_csv(dir / "a.csv", 100, 3, 9);
  const Dataset d = ingest_csv(dir / "a.csv");
  CHECK(d.size() == 100);
  CHECK(d.num_features() == 3);
  write_synthetic_csv(dir / "b.csv", 100, 3, 9);
  std::ifstream a(dir / "a.csv"), b(dir / "b.csv");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
}
