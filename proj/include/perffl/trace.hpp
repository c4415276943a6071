#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "perffl/core.hpp"

namespace perffl {

struct TraceRow {
  std::size_t t = 0;
  double loss = 0.0;
  ModelVector theta;
  std::size_t enrolled = 0;
  std::size_t removed_total = 0;
  std::size_t n_total = 0;
  std::vector<std::size_t> client_n;  // samples drawn by each client (0 when idle)
  double wall_time = 0.0;             // seconds since run start; not serialized
};

/// T + 1 rows. Row t holds the server's global model after t iterations (it
/// changes only at aggregation) and the sampling counters of iteration t - 1.
/// Row 0 has zero counters.
struct RunTrace {
  std::vector<TraceRow> rows;

  const TraceRow& final_row() const { return rows.back(); }
  std::size_t total_samples() const;
  std::size_t dim() const { return rows.empty() ? 0 : rows.front().theta.size(); }

  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
  static RunTrace read_csv(std::istream& in);
  static RunTrace read_csv(const std::filesystem::path& path);
};

/// Deterministic columns equal (t, loss, theta, counters); wall time ignored.
bool same_trajectory(const RunTrace& a, const RunTrace& b);

}  // namespace perffl
