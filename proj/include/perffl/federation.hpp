#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "perffl/core.hpp"
#include "perffl/environments.hpp"
#include "perffl/estimation.hpp"
#include "perffl/trace.hpp"

namespace perffl {

struct ClientState {
  std::size_t id = 0;
  ContaminatedClient spec;
  ModelVector theta;
  HistoryWindow window;
  AdaptiveSizerState sizer;
  std::size_t steps = 0;  // iterations this client has been active
};

struct ServerState {
  ModelVector theta;
  std::size_t round = 0;
  std::vector<std::size_t> enrolled;
};

/// Per-iteration diagnostics passed to an optional observer.
struct IterationInfo {
  std::size_t t = 0;
  std::size_t client = 0;
  std::size_t n_drawn = 0;
  std::size_t n_removed = 0;
  std::size_t contaminants_drawn = 0;
  std::size_t contaminants_removed = 0;
  bool used_jacobian = false;
  bool jacobian_fallback = false;
};

struct RunOptions {
  /// Evaluate the loss through closed forms when the environment has one.
  bool prefer_closed_form = true;
  std::function<void(const IterationInfo&)> observer;
};

RunTrace run_profl(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients, const RunOptions& opts = {});
RunTrace run_pofl(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients, const RunOptions& opts = {});
RunTrace run_pfl(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients, const RunOptions& opts = {});
RunTrace run_centralized_pg(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients,
                            const RunOptions& opts = {});

/// Dispatches on cfg.algorithm.
RunTrace run_experiment(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients,
                        const RunOptions& opts = {});
/// Validates cfg, builds its clients and runs it.
RunTrace run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Starting model: theta0 when given, else the origin, projected into the box.
ModelVector initial_theta(const ExperimentConfig& cfg);

}  // namespace perffl
