#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perffl/core.hpp"
#include "perffl/dataset.hpp"
#include "perffl/trace.hpp"

namespace perffl {

/// Bad command-line or preset request.
class UsageError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

enum class Metric { Loss, Accuracy };

std::string to_string(Metric m);

/// A labelled list of `key=value` overrides applied on top of a base config.
struct OverrideSet {
  std::string label;
  std::vector<std::string> overrides;
};

struct ExperimentPreset {
  std::string name;
  std::string description;
  ExperimentConfig base;
  std::string sweep_parameter;     // display name; empty for a single cell
  std::vector<OverrideSet> sweep;  // empty => one unlabelled value
  std::vector<OverrideSet> series; // algorithms or variants compared
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  Metric metric = Metric::Loss;
  /// Rows of the synthetic CSV written when a csv_static preset has no data_path.
  std::size_t synthetic_rows = 0;
};

const std::vector<ExperimentPreset>& presets();
std::vector<std::string> preset_names();
/// Throws UsageError listing every preset when the name is unknown.
const ExperimentPreset& find_preset(std::string_view name);

/// The fully resolved configuration of one cell: base, then sweep value,
/// then series, then user overrides, with the seed set last.
ExperimentConfig cell_config(const ExperimentPreset& preset, const OverrideSet& sweep, const OverrideSet& series,
                             std::span<const std::string> user_overrides, std::uint64_t seed);

struct CellResult {
  std::string sweep;
  std::string series;
  std::uint64_t seed = 0;
  ExperimentConfig config;
  RunTrace trace;
  double metric = 0.0;  // final loss or accuracy
  std::size_t convergence_iteration = 0;
};

struct SummaryRow {
  std::string preset;
  std::string sweep;
  std::string series;
  std::string metric;
  std::size_t seeds = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over seeds
  double convergence_mean = 0.0;
  double samples_mean = 0.0;
};

struct SummaryReport {
  std::vector<SummaryRow> rows;

  const SummaryRow& at(std::string_view sweep, std::string_view series) const;
  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
  static SummaryReport read_csv(std::istream& in);
  static SummaryReport read_csv(const std::filesystem::path& path);
};

struct PresetResult {
  std::string preset;
  SummaryReport summary;
  std::vector<CellResult> cells;

  /// Cells of one (sweep, series) pair ordered by seed.
  std::vector<const CellResult*> select(std::string_view sweep, std::string_view series) const;
  /// Metric values of one (sweep, series) pair ordered by seed.
  std::vector<double> metrics(std::string_view sweep, std::string_view series) const;
};

struct PresetRunOptions {
  std::vector<std::string> overrides;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::vector<std::string> only_sweep;   // empty => all
  std::vector<std::string> only_series;  // empty => all
  unsigned jobs = 1;
  std::function<void(const CellResult&)> on_cell;
};

/// Runs every (sweep value x seed x series) cell. With an output directory,
/// writes <dir>/<preset>/<cell>/trace.csv and config.yaml, plus summary.csv
/// and curves.csv under <dir>/<preset>.
PresetResult run_preset(std::string_view name, const PresetRunOptions& options = {});
PresetResult run_preset(const ExperimentPreset& preset, const PresetRunOptions& options = {});

/// Directory name of a cell.
std::string cell_name(std::string_view sweep, std::string_view series, std::uint64_t seed);

/// Aggregates cells into one row per (sweep, series) in first-seen order.
SummaryReport summarize(std::string_view preset, std::span<const CellResult> cells, Metric metric);

/// Rebuilds the summary of a finished run from its trace and config files.
SummaryReport summarize_directory(const ExperimentPreset& preset, const std::filesystem::path& preset_dir);

/// Tidy per-iteration curves: sweep, series, t, loss mean and std over seeds.
void write_curves_csv(std::ostream& out, std::span<const CellResult> cells);

/// First t whose loss is within 1% of the final loss.
std::size_t convergence_iteration(const RunTrace& trace);

/// Final metric of a run: loss from the trace, or accuracy of its final model.
double final_metric(const ExperimentConfig& cfg, const RunTrace& trace, Metric metric);

/// The performative optimum of a configuration: closed form when available,
/// otherwise golden-section search over a one-dimensional box.
ModelVector reference_optimum(const ExperimentConfig& cfg);

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_std(std::span<const double> x);

struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, t approximation
};

/// Spearman rank correlation with average ranks for ties.
SpearmanResult spearman(std::span<const double> x, std::span<const double> y);

/// Slope and R^2 of an ordinary least-squares line.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
LineFit fit_line(std::span<const double> x, std::span<const double> y);

}  // namespace perffl
