#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "perffl/config_io.hpp"
#include "perffl/federation.hpp"
#include "perffl/harness.hpp"

namespace {

std::string default_out_dir() {
  if (const char* env = std::getenv("PERFFL_OUT"); env && *env) return env;
  return "perffl-runs";
}

int list_presets() {
  for (const auto& p : perffl::presets()) {
    std::cout << p.name << "  " << p.description;
    if (!p.sweep_parameter.empty()) std::cout << "  [sweep: " << p.sweep_parameter << "]";
    std::cout << '\n';
  }
  return 0;
}

int validate(const std::string& path) {
  const perffl::ExperimentConfig cfg = perffl::load_config(path);
  for (const auto& w : cfg.validate()) std::cerr << "warning: " << w << '\n';
  perffl::make_clients(cfg);
  std::cout << path << ": ok (" << perffl::to_string(cfg.algorithm) << ", d=" << cfg.dim()
            << ", N=" << cfg.num_clients << ", T=" << cfg.T << ")\n";
  return 0;
}

int run(const std::string& preset, const std::vector<std::string>& overrides, const std::string& out,
        const std::vector<std::uint64_t>& seeds, unsigned jobs) {
  perffl::PresetRunOptions opts;
  opts.overrides = overrides;
  opts.out_dir = out;
  opts.jobs = jobs;
  if (!seeds.empty()) opts.seeds = seeds;
  opts.on_cell = [](const perffl::CellResult& c) {
    std::cerr << fmt::format("{} {} seed {}: {:.6g}\n", c.sweep, c.series, c.seed, c.metric);
  };
  const auto result = perffl::run_preset(preset, opts);
  std::cout << "sweep,series,metric,mean,std,seeds\n";
  for (const auto& r : result.summary.rows)
    std::cout << fmt::format("{},{},{},{:.6g},{:.3g},{}\n", r.sweep, r.series, r.metric, r.mean, r.std, r.seeds);
  std::cout << "wrote " << (std::filesystem::path(out) / preset).string() << '\n';
  return 0;
}

int run_config(const std::string& path, const std::vector<std::string>& overrides, const std::string& trace_out) {
  perffl::ExperimentConfig cfg = perffl::load_config(path);
  for (const auto& o : overrides) perffl::apply_override(cfg, o);
  for (const auto& w : cfg.validate()) std::cerr << "warning: " << w << '\n';
  const perffl::RunTrace trace = perffl::run_experiment(cfg);
  if (trace_out.empty())
    trace.write_csv(std::cout);
  else
    trace.write_csv(std::filesystem::path(trace_out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Performative federated learning experiments"};
  app.require_subcommand(1);

  auto* list_cmd = app.add_subcommand("list-presets", "List the built-in experiment presets");

  std::string config_path;
  auto* validate_cmd = app.add_subcommand("validate", "Check a YAML configuration");
  validate_cmd->add_option("config", config_path, "Configuration file")->required();

  std::string preset, out = default_out_dir();
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  unsigned jobs = 1;
  auto* run_cmd = app.add_subcommand("run", "Run a preset sweep");
  run_cmd->add_option("--preset", preset, "Preset name")->required();
  run_cmd->add_option("--override", overrides, "key=value applied to every cell")->take_all();
  run_cmd->add_option("--out", out, "Output directory (default $PERFFL_OUT or ./perffl-runs)");
  run_cmd->add_option("--seeds", seeds, "Seeds to run instead of the preset's");
  run_cmd->add_option("--jobs", jobs, "Concurrent cells")->check(CLI::PositiveNumber);

  std::string trace_out;
  std::vector<std::string> cfg_overrides;
  auto* config_cmd = app.add_subcommand("run-config", "Run a single YAML configuration");
  config_cmd->add_option("config", config_path, "Configuration file")->required();
  config_cmd->add_option("--override", cfg_overrides, "key=value")->take_all();
  config_cmd->add_option("--trace", trace_out, "Trace CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*list_cmd) return list_presets();
    if (*validate_cmd) return validate(config_path);
    if (*run_cmd) return run(preset, overrides, out, seeds, jobs);
    if (*config_cmd) return run_config(config_path, cfg_overrides, trace_out);
  } catch (const perffl::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const perffl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
