#include "perffl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "perffl/config_io.hpp"
#include "perffl/environments.hpp"
#include "perffl/federation.hpp"

namespace perffl {

std::string to_string(Metric m) { return m == Metric::Loss ? "loss" : "accuracy"; }

namespace {

ExperimentConfig scalar_base(EnvironmentKind kind, double lo, double hi) {
  ExperimentConfig c;
  c.environment.kind = kind;
  c.environment.dim = 1;
  c.num_clients = 10;
  c.projection = ParameterBox::uniform(1, lo, hi);
  return c;
}

OverrideSet os(std::string label, std::vector<std::string> overrides) {
  return {std::move(label), std::move(overrides)};
}

std::string num(double v) { return fmt::format("{}", v); }

std::vector<OverrideSet> values(const std::string& key, const std::vector<double>& vs) {
  std::vector<OverrideSet> out;
  for (double v : vs) out.push_back(os(key + "=" + num(v), {key + "=" + num(v)}));
  return out;
}

// gamma spread [1.5 - a, 1.5 + a] labelled by a
std::vector<OverrideSet> gamma_spread(const std::vector<double>& halfwidths) {
  std::vector<OverrideSet> out;
  for (double a : halfwidths)
    out.push_back(os("alpha=" + num(a),
                     {"environment.gamma_low=" + num(1.5 - a), "environment.gamma_high=" + num(1.5 + a)}));
  return out;
}

ExperimentConfig house_pricing_base() {
  ExperimentConfig c = scalar_base(EnvironmentKind::HousePricingRegression, -10.0, 10.0);
  c.ridge = 10.0 / 3.0;
  c.environment.x_mean = 1.0;
  c.environment.x_var = 1.0;
  c.environment.coef = 3.6;
  c.environment.noise_var = 0.1;
  c.environment.gamma_low = 1.5;
  c.environment.gamma_high = 1.8;
  c.R = 5;
  c.H = 1;
  c.T = 1500;
  c.sample_size = FixedSampleSize{500};
  return c;
}

ExperimentConfig contribution_pricing_base() {
  ExperimentConfig c = scalar_base(EnvironmentKind::ContributionPricing, 0.0, 5.0);
  c.environment.group_means = {-1.0, 3.0};
  c.environment.budget = 1.0;
  c.environment.sigma = 1.0;
  c.environment.gamma_low = 0.09;
  c.environment.gamma_high = 0.11;
  c.eta = 0.001;
  c.R = 5;
  c.H = 20;
  c.T = 3000;
  c.sample_size = FixedSampleSize{500};
  return c;
}

ExperimentConfig classification_base() {
  ExperimentConfig c = scalar_base(EnvironmentKind::StrategicClassification, -5.0, 5.0);
  c.ridge = 0.01;
  c.environment.class1_mean = -1.0;
  c.environment.class0_mean = 1.0;
  c.environment.class_var = 0.25;
  c.environment.gamma_low = 2.8;
  c.environment.gamma_high = 3.2;
  c.environment.gamma0_low = 0.0;
  c.environment.gamma0_high = 0.04;
  c.eta = 0.03;
  c.T = 2000;
  c.sample_size = FixedSampleSize{500};
  c.n_eval = 2000;
  return c;
}

ExperimentConfig csv_base(std::size_t dim) {
  ExperimentConfig c;
  c.environment.kind = EnvironmentKind::CsvStatic;
  c.environment.dim = dim;
  c.num_clients = 10;
  c.projection = ParameterBox::uniform(dim, -10.0, 10.0);
  c.ridge = 0.01;
  c.R = 5;
  c.H = 1;
  c.T = 300;
  c.n_eval = 5000;
  return c;
}

const std::vector<std::string> kProFL{"algorithm=profl"};
const std::vector<std::string> kPFL{"algorithm=pfl"};
const std::vector<std::string> kPoFL{"algorithm=pofl"};

std::vector<ExperimentPreset> build_presets() {
  std::vector<ExperimentPreset> out;

  {
    ExperimentPreset p;
    p.name = "pricing-po-vs-ps";
    p.description = "scalar demand pricing (mu0=6, gamma=2): ProFL reaches the optimum 1.5, PFL the stable point 3.0";
    p.base = scalar_base(EnvironmentKind::GaussianDemandPricing, 0.0, 5.0);
    p.base.num_clients = 1;
    p.base.environment.mu0_low = p.base.environment.mu0_high = 6.0;
    p.base.environment.gamma_low = p.base.environment.gamma_high = 2.0;
    p.base.eta = 0.002;
    p.base.H = 100;
    p.base.R = 1;
    p.base.T = 1200;
    p.base.theta0 = {1.0};
    p.base.sample_size = FixedSampleSize{50000};
    p.series = {os("ProFL", kProFL), os("PFL", kPFL)};
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "table-pricing-loss";
    p.description = "house pricing, centralized PG vs ProFL under growing heterogeneity of gamma";
    p.base = house_pricing_base();
    p.base.eta = 0.01;
    p.sweep_parameter = "alpha";
    p.sweep = gamma_spread({0.0, 0.25, 0.5});
    p.series = {os("PG", {"algorithm=centralized_pg", "R=1"}), os("ProFL", kProFL)};
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "table-accuracy-same";
    p.description = "strategic classification, every client with the same class means";
    p.base = classification_base();
    p.base.R = 10;
    p.base.H = 500;
    p.series = {os("ProFL", kProFL), os("PFL", kPFL), os("PoFL", kPoFL)};
    p.metric = Metric::Accuracy;
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "table-accuracy-different";
    p.description = "strategic classification, half of the clients with class-1 mean -0.8";
    p.base = classification_base();
    p.base.environment.heterogeneous_classes = true;
    p.base.R = 500;
    p.base.H = 1;
    p.series = {os("ProFL", kProFL), os("PFL", kPFL), os("PoFL", kPoFL)};
    p.metric = Metric::Accuracy;
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "table-accuracy-credit";
    p.description = "static CSV classification with a strategic class-1 shift (credit-style; synthetic data unless data_path is set)";
    p.base = csv_base(4);
    p.base.eta = 0.01;
    p.base.environment.gamma_low = p.base.environment.gamma_high = 3.0;
    p.base.environment.gamma0_low = p.base.environment.gamma0_high = 0.0;
    p.series = {os("ProFL", kProFL), os("PFL", kPFL), os("PoFL", kPoFL)};
    p.metric = Metric::Accuracy;
    p.synthetic_rows = 58120;
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "table-accuracy-adult";
    p.description = "static CSV classification with a strategic class-1 shift (adult-style; synthetic data unless data_path is set)";
    p.base = csv_base(4);
    p.base.eta = 0.03;
    p.base.environment.gamma_low = 2.8;
    p.base.environment.gamma_high = 3.2;
    p.base.environment.gamma0_low = 0.0;
    p.base.environment.gamma0_high = 0.004;
    p.series = {os("ProFL", kProFL), os("PFL", kPFL), os("PoFL", kPoFL)};
    p.metric = Metric::Accuracy;
    p.synthetic_rows = 23680;
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig1a-contamination";
    p.description = "demand pricing under Huber contamination: ProFL with the robust filter vs PoFL without it";
    p.base = scalar_base(EnvironmentKind::GaussianDemandPricing, 0.0, 5.0);
    p.base.environment.mu0_low = 6.0;
    p.base.environment.mu0_high = 7.0;
    p.base.environment.gamma_low = 1.0;
    p.base.environment.gamma_high = 3.0;
    p.base.environment.sigma = 1.0;
    p.base.eta = 0.001;
    p.base.R = 5;
    p.base.H = 25;
    p.base.T = 2000;
    p.base.sample_size = FixedSampleSize{500};
    p.sweep_parameter = "epsilon";
    p.sweep = values("epsilon", {0.0, 0.1, 0.2, 0.4});
    p.series = {os("ProFL-filter", {"algorithm=profl", "robust_filter=true"}), os("PoFL", kPoFL)};
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig1b-server-jacobian";
    p.description = "contribution pricing with 100 clients and n=60: server-side vs local Jacobian estimates";
    p.base = contribution_pricing_base();
    p.base.num_clients = 100;
    p.base.eta = 0.0001;
    p.base.R = 3;
    p.base.H = 10;
    p.base.sample_size = FixedSampleSize{60};
    p.series = {os("ProFL-server", {"algorithm=profl", "server_jacobian=single"}), os("ProFL-local", kProFL)};
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig1c-adaptive";
    p.description = "contribution pricing: fixed n=1000 vs the adaptive sample size rule";
    p.base = contribution_pricing_base();
    p.base.H = 100;
    p.base.sample_size = FixedSampleSize{1000};
    p.series = {os("fixed-1000", kProFL),
                os("adaptive-0.05", {"algorithm=profl", "sample_size={mode: adaptive, Phi: 0.05, phi: 0.05, n_min: 50, n_max: 1000}"}),
                os("adaptive-0.1", {"algorithm=profl", "sample_size={mode: adaptive, Phi: 0.1, phi: 0.05, n_min: 50, n_max: 1000}"})};
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig2a-sample-sizes";
    p.description = "contribution pricing: effect of the per-client sample size";
    p.base = contribution_pricing_base();
    p.sweep_parameter = "n";
    p.sweep = values("n", {50, 500, 5000});
    p.series = {os("ProFL", kProFL)};
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig2b-learning-rates";
    p.description = "contribution pricing: effect of the learning rate";
    p.base = contribution_pricing_base();
    p.base.sample_size = FixedSampleSize{2500};
    p.sweep_parameter = "eta";
    p.sweep = values("eta", {0.03, 0.01, 0.001});
    p.series = {os("ProFL", kProFL)};
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig2c-window";
    p.description = "contribution pricing: effect of the finite-difference window";
    p.base = contribution_pricing_base();
    p.sweep_parameter = "H";
    p.sweep = values("H", {4, 20, 100});
    p.series = {os("ProFL", kProFL)};
    out.push_back(std::move(p));
  }

  const auto house_series = [] {
    return std::vector<OverrideSet>{os("PFL", {"algorithm=pfl", "eta=0.005"}),
                                    os("ProFL", {"algorithm=profl", "eta=0.001"})};
  };
  {
    ExperimentPreset p;
    p.name = "fig3a-enrollment";
    p.description = "house pricing: fraction of clients enrolled per round";
    p.base = house_pricing_base();
    p.sweep_parameter = "enrollment_fraction";
    p.sweep = values("enrollment_fraction", {0.2, 0.5, 1.0});
    p.series = house_series();
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig3b-heterogeneity";
    p.description = "house pricing: gamma spread [1.5 - alpha, 1.5 + alpha]";
    p.base = house_pricing_base();
    p.sweep_parameter = "alpha";
    p.sweep = gamma_spread({0.1, 0.3, 1.0});
    p.series = house_series();
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig4a-sample-sizes";
    p.description = "house pricing: per-client sample size";
    p.base = house_pricing_base();
    p.sweep_parameter = "n";
    p.sweep = values("n", {5, 50, 500});
    p.series = house_series();
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig4b-rounds";
    p.description = "house pricing: local steps per round";
    p.base = house_pricing_base();
    p.sweep_parameter = "R";
    p.sweep = values("R", {5, 20, 50});
    p.series = house_series();
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig5a-contribution";
    p.description = "linear contribution mixture with a1 = -a2 = 0.5: optimum and stable point coincide";
    p.base = scalar_base(EnvironmentKind::AppendixLinearContribution, -1.0, 1.0);
    p.base.environment.a1 = 0.5;
    p.base.environment.a2 = -0.5;
    p.base.environment.group_var = 0.25;
    p.base.eta = 0.03;
    p.base.R = 5;
    p.base.H = 1;
    p.base.T = 1000;
    p.base.theta0 = {0.5};
    p.base.sample_size = FixedSampleSize{500};
    p.series = {os("ProFL", kProFL), os("PFL", kPFL)};
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "fig5b-contribution-regression";
    p.description = "regression on a two-group mixture whose shares follow the per-group losses";
    p.base = scalar_base(EnvironmentKind::ContributionRegression, -10.0, 10.0);
    p.base.environment.x_mean = 1.0;
    p.base.environment.x_var = 1.0;
    p.base.environment.slope1 = 1.0;
    p.base.environment.slope2 = 3.0;
    p.base.environment.noise_var = 4.0;
    p.base.environment.c = 1.0;
    p.base.ridge = 10.0 / 3.0;
    p.base.eta = 0.001;
    p.base.R = 5;
    p.base.H = 1;
    p.base.T = 2000;
    p.base.sample_size = FixedSampleSize{500};
    p.series = {os("ProFL", kProFL), os("PFL", kPFL)};
    out.push_back(std::move(p));
  }
  {
    ExperimentPreset p;
    p.name = "appendix-fedavg-equivalence";
    p.description = "static CSV data with gamma = 0: ProFL and PFL coincide";
    p.base = csv_base(4);
    p.base.eta = 0.03;
    p.base.T = 200;
    p.base.environment.gamma_low = p.base.environment.gamma_high = 0.0;
    p.base.environment.gamma0_low = p.base.environment.gamma0_high = 0.0;
    p.series = {os("ProFL", kProFL), os("PFL", kPFL)};
    p.synthetic_rows = 5000;
    out.push_back(std::move(p));
  }
  return out;
}

std::string sanitize(std::string_view s) {
  std::string out;
  for (char ch : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' || ch == '_';
    out.push_back(ok ? ch : '_');
  }
  return out.empty() ? std::string("_") : out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

const OverrideSet kSingle{"-", {}};

std::filesystem::path synthetic_path(const ExperimentPreset& preset, const PresetRunOptions& options) {
  const auto dir = options.out_dir ? *options.out_dir / preset.name
                                   : std::filesystem::temp_directory_path() / "perffl" / preset.name;
  std::filesystem::create_directories(dir);
  return dir / "synthetic.csv";
}

bool wanted(const std::vector<std::string>& filter, const std::string& label) {
  return filter.empty() || std::find(filter.begin(), filter.end(), label) != filter.end();
}

}  // namespace

const std::vector<ExperimentPreset>& presets() {
  static const std::vector<ExperimentPreset> all = build_presets();
  return all;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : presets()) names.push_back(p.name);
  return names;
}

const ExperimentPreset& find_preset(std::string_view name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw UsageError(fmt::format("unknown preset '{}'; available presets: {}", name, fmt::join(preset_names(), ", ")));
}

ExperimentConfig cell_config(const ExperimentPreset& preset, const OverrideSet& sweep, const OverrideSet& series,
                             std::span<const std::string> user_overrides, std::uint64_t seed) {
  ExperimentConfig cfg = preset.base;
  for (const auto& o : sweep.overrides) apply_override(cfg, o);
  for (const auto& o : series.overrides) apply_override(cfg, o);
  for (const auto& o : user_overrides) apply_override(cfg, o);
  cfg.seed = seed;
  if (cfg.server_jacobian && cfg.server_jacobian->size() != cfg.num_clients)
    cfg.server_jacobian = std::vector<std::size_t>(cfg.num_clients, 0);
  cfg.validate();
  return cfg;
}

std::string cell_name(std::string_view sweep, std::string_view series, std::uint64_t seed) {
  return fmt::format("{}__{}__seed{}", sanitize(sweep), sanitize(series), seed);
}

std::size_t convergence_iteration(const RunTrace& trace) {
  if (trace.rows.empty()) return 0;
  const double final_loss = trace.final_row().loss;
  const double band = 0.01 * std::abs(final_loss);
  for (const auto& r : trace.rows)
    if (std::abs(r.loss - final_loss) <= band) return r.t;
  return trace.final_row().t;
}

double final_metric(const ExperimentConfig& cfg, const RunTrace& trace, Metric metric) {
  if (metric == Metric::Loss) return trace.final_row().loss;
  const auto clients = make_clients(cfg);
  return classify_accuracy(clients, trace.final_row().theta, cfg.n_eval, cfg.seed);
}

PresetResult run_preset(std::string_view name, const PresetRunOptions& options) {
  return run_preset(find_preset(name), options);
}

PresetResult run_preset(const ExperimentPreset& preset, const PresetRunOptions& options) {
  const auto& sweep = preset.sweep.empty() ? std::vector<OverrideSet>{kSingle} : preset.sweep;
  const auto& seeds = options.seeds ? *options.seeds : preset.seeds;
  if (seeds.empty()) throw UsageError("no seeds to run");

  std::vector<std::string> user = options.overrides;
  if (preset.base.environment.kind == EnvironmentKind::CsvStatic && preset.base.environment.data_path.empty()) {
    bool has_path = false;
    for (const auto& o : user) has_path = has_path || o.rfind("environment.data_path=", 0) == 0;
    if (!has_path) {
      const auto path = synthetic_path(preset, options);
      if (!std::filesystem::exists(path))
        write_synthetic_csv(path, preset.synthetic_rows, preset.base.environment.dim, 2024);
      user.insert(user.begin(), "environment.data_path=" + path.string());
    }
  }

  struct Job {
    const OverrideSet* sweep;
    const OverrideSet* series;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& s : sweep) {
    if (!wanted(options.only_sweep, s.label)) continue;
    for (const auto& a : preset.series) {
      if (!wanted(options.only_series, a.label)) continue;
      for (std::uint64_t seed : seeds) jobs.push_back({&s, &a, seed});
    }
  }
  if (jobs.empty()) throw UsageError("the sweep and series filters select no cells");

  // Resolve every configuration before any run so bad overrides fail fast.
  std::vector<CellResult> cells(jobs.size());
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    cells[k].sweep = jobs[k].sweep->label;
    cells[k].series = jobs[k].series->label;
    cells[k].seed = jobs[k].seed;
    cells[k].config = cell_config(preset, *jobs[k].sweep, *jobs[k].series, user, jobs[k].seed);
  }

  std::filesystem::path preset_dir;
  if (options.out_dir) {
    preset_dir = *options.out_dir / preset.name;
    std::filesystem::create_directories(preset_dir);
  }

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  const auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= cells.size()) return;
      try {
        CellResult& c = cells[k];
        c.trace = run_experiment(c.config);
        c.metric = final_metric(c.config, c.trace, preset.metric);
        c.convergence_iteration = convergence_iteration(c.trace);
        if (options.out_dir) {
          const auto dir = preset_dir / cell_name(c.sweep, c.series, c.seed);
          std::filesystem::create_directories(dir);
          c.trace.write_csv(dir / "trace.csv");
          std::ofstream(dir / "config.yaml") << dump_config(c.config);
        }
        if (options.on_cell) {
          std::lock_guard lock(mu);
          options.on_cell(c);
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = cells.size();
        return;
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(cells.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  PresetResult result;
  result.preset = preset.name;
  result.summary = summarize(preset.name, cells, preset.metric);
  result.cells = std::move(cells);
  if (options.out_dir) {
    result.summary.write_csv(preset_dir / "summary.csv");
    std::ofstream curves(preset_dir / "curves.csv");
    write_curves_csv(curves, result.cells);
  }
  return result;
}

SummaryReport summarize(std::string_view preset, std::span<const CellResult> cells, Metric metric) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const CellResult*>> groups;
  for (const auto& c : cells) {
    const auto key = std::make_pair(c.sweep, c.series);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&c);
  }
  SummaryReport report;
  for (const auto& key : order) {
    const auto& g = groups[key];
    Vector m, conv, samples;
    for (const auto* c : g) {
      m.push_back(c->metric);
      conv.push_back(static_cast<double>(c->convergence_iteration));
      samples.push_back(static_cast<double>(c->trace.total_samples()));
    }
    SummaryRow row;
    row.preset = std::string(preset);
    row.sweep = key.first;
    row.series = key.second;
    row.metric = to_string(metric);
    row.seeds = g.size();
    row.mean = mean(m);
    row.std = sample_std(m);
    row.convergence_mean = mean(conv);
    row.samples_mean = mean(samples);
    report.rows.push_back(std::move(row));
  }
  return report;
}

SummaryReport summarize_directory(const ExperimentPreset& preset, const std::filesystem::path& preset_dir) {
  std::vector<CellResult> cells;
  const auto& sweep = preset.sweep.empty() ? std::vector<OverrideSet>{kSingle} : preset.sweep;
  for (const auto& s : sweep)
    for (const auto& a : preset.series)
      for (std::uint64_t seed : preset.seeds) {
        const auto dir = preset_dir / cell_name(s.label, a.label, seed);
        if (!std::filesystem::exists(dir / "trace.csv")) continue;
        CellResult c;
        c.sweep = s.label;
        c.series = a.label;
        c.seed = seed;
        c.config = load_config(dir / "config.yaml");
        c.trace = RunTrace::read_csv(dir / "trace.csv");
        c.metric = final_metric(c.config, c.trace, preset.metric);
        c.convergence_iteration = convergence_iteration(c.trace);
        cells.push_back(std::move(c));
      }
  return summarize(preset.name, cells, preset.metric);
}

void write_curves_csv(std::ostream& out, std::span<const CellResult> cells) {
  out << "sweep,series,t,loss_mean,loss_std,seeds\n";
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const CellResult*>> groups;
  for (const auto& c : cells) {
    const auto key = std::make_pair(c.sweep, c.series);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&c);
  }
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::size_t rows = g.front()->trace.rows.size();
    for (const auto* c : g) rows = std::min(rows, c->trace.rows.size());
    for (std::size_t r = 0; r < rows; ++r) {
      Vector losses;
      for (const auto* c : g) losses.push_back(c->trace.rows[r].loss);
      out << fmt::format("{},{},{},{:.17g},{:.17g},{}\n", key.first, key.second, g.front()->trace.rows[r].t,
                         mean(losses), sample_std(losses), g.size());
    }
  }
}

const SummaryRow& SummaryReport::at(std::string_view sweep, std::string_view series) const {
  for (const auto& r : rows)
    if (r.sweep == sweep && r.series == series) return r;
  throw UsageError(fmt::format("no summary row for sweep '{}' and series '{}'", sweep, series));
}

void SummaryReport::write_csv(std::ostream& out) const {
  out << "preset,sweep,series,metric,seeds,mean,std,convergence_mean,samples_mean\n";
  for (const auto& r : rows)
    out << fmt::format("{},{},{},{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.preset, r.sweep, r.series, r.metric,
                       r.seeds, r.mean, r.std, r.convergence_mean, r.samples_mean);
}

void SummaryReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw RunError("cannot write summary file " + path.string());
  write_csv(out);
}

SummaryReport SummaryReport::read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("preset,sweep,series", 0) != 0)
    throw RunError("summary csv: unexpected header");
  SummaryReport report;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 9) throw RunError(fmt::format("summary csv: wrong column count on line {}", lineno));
    SummaryRow r;
    r.preset = c[0];
    r.sweep = c[1];
    r.series = c[2];
    r.metric = c[3];
    r.seeds = std::stoul(c[4]);
    r.mean = std::stod(c[5]);
    r.std = std::stod(c[6]);
    r.convergence_mean = std::stod(c[7]);
    r.samples_mean = std::stod(c[8]);
    report.rows.push_back(std::move(r));
  }
  return report;
}

SummaryReport SummaryReport::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RunError("cannot read summary file " + path.string());
  return read_csv(in);
}

std::vector<const CellResult*> PresetResult::select(std::string_view sweep, std::string_view series) const {
  std::vector<const CellResult*> out;
  for (const auto& c : cells)
    if (c.sweep == sweep && c.series == series) out.push_back(&c);
  std::sort(out.begin(), out.end(), [](const CellResult* a, const CellResult* b) { return a->seed < b->seed; });
  return out;
}

std::vector<double> PresetResult::metrics(std::string_view sweep, std::string_view series) const {
  std::vector<double> out;
  for (const auto* c : select(sweep, series)) out.push_back(c->metric);
  return out;
}

ModelVector reference_optimum(const ExperimentConfig& cfg) {
  const auto clients = make_clients(cfg);
  if (auto cf = closed_form_optima(clients)) return project(cf->theta_po, cfg.projection);
  if (cfg.dim() != 1) throw UsageError("reference_optimum: numeric search needs a one-dimensional model");
  const auto loss = [&](double x) {
    const double th[1] = {x};
    return performative_loss(clients, th, std::max<std::size_t>(cfg.n_eval, 200000), cfg.seed);
  };
  // coarse grid, then golden section around the best cell
  const double lo = cfg.projection.lower[0], hi = cfg.projection.upper[0];
  const std::size_t grid = 200;
  std::size_t best = 0;
  double best_val = loss(lo);
  for (std::size_t k = 1; k <= grid; ++k) {
    const double v = loss(lo + (hi - lo) * static_cast<double>(k) / grid);
    if (v < best_val) best_val = v, best = k;
  }
  const double step = (hi - lo) / grid;
  double a = std::max(lo, lo + step * (static_cast<double>(best) - 1.0));
  double b = std::min(hi, lo + step * (static_cast<double>(best) + 1.0));
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = loss(c), fd = loss(d);
  for (int it = 0; it < 100 && b - a > 1e-10; ++it) {
    if (fc < fd) {
      b = d, d = c, fd = fc;
      c = b - inv_phi * (b - a), fc = loss(c);
    } else {
      a = c, c = d, fc = fd;
      d = a + inv_phi * (b - a), fd = loss(d);
    }
  }
  return {0.5 * (a + b)};
}

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_std(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

namespace {

Vector average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  Vector ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw UsageError("spearman: length mismatch");
  if (x.size() < 3) throw UsageError("spearman: needs at least three pairs");
  const Vector rx = average_ranks(x), ry = average_ranks(y);
  SpearmanResult r;
  r.rho = pearson(rx, ry);
  const double n = static_cast<double>(x.size());
  if (std::abs(r.rho) >= 1.0) {
    r.p_value = 0.0;
    return r;
  }
  const double t = r.rho * std::sqrt((n - 2.0) / (1.0 - r.rho * r.rho));
  const boost::math::students_t dist(n - 2.0);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return r;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("fit_line: need two or more paired points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit f;
  if (sxx == 0.0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

}  // namespace perffl
