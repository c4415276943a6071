#include "perffl/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include <fmt/format.h>

namespace perffl {

namespace {

enum class Mode { ProFL, PoFL, PFL };

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_clients(const ExperimentConfig& cfg, const std::vector<ContaminatedClient>& clients) {
  if (clients.size() != cfg.num_clients)
    throw ConfigError(fmt::format("{} clients supplied, config expects {}", clients.size(), cfg.num_clients));
  for (const auto& c : clients) {
    if (!c.env) throw ConfigError("client without environment");
    if (c.env->dim() != cfg.dim())
      throw ConfigError(fmt::format("{} has dimension {}, config says {}", c.env->describe(), c.env->dim(), cfg.dim()));
    if (c.n < 1) throw ConfigError("client sample size must be >= 1");
  }
}

void check_finite(std::span<const double> v, std::size_t t, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(fmt::format("non-finite {} at iteration {}", what, t));
}

double max_row_norm(const DenseMatrix& g) {
  double m = 0.0;
  for (std::size_t r = 0; r < g.rows(); ++r) m = std::max(m, norm(g.row(r)));
  return m;
}

TraceRow make_row(std::size_t t, const ModelVector& theta, const std::vector<ContaminatedClient>& clients,
                  const ExperimentConfig& cfg, const RunOptions& opts, Clock::time_point start) {
  TraceRow row;
  row.t = t;
  row.theta = theta;
  row.loss = performative_loss(clients, theta, cfg.n_eval, cfg.seed, opts.prefer_closed_form);
  row.wall_time = seconds_since(start);
  return row;
}

/// Per-client work product of phase one.
struct Draw {
  SampleBatch clean;
  Vector g1;
  Vector f_hat;
  double loss_mean = 0.0;
  double max_grad = 0.0;
  std::size_t removed = 0;
};

RunTrace run_federated(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients,
                       const RunOptions& opts, Mode mode) {
  cfg.validate();
  check_clients(cfg, clients);
  const auto start = Clock::now();
  const std::size_t N = clients.size();
  const bool filter = mode == Mode::ProFL && cfg.robust_filter.has_value();
  const auto* adaptive = mode == Mode::ProFL ? std::get_if<AdaptiveSampleSize>(&cfg.sample_size) : nullptr;
  const bool server_side = mode == Mode::ProFL && cfg.server_jacobian.has_value();

  ServerState server;
  server.theta = initial_theta(cfg);
  std::vector<ClientState> state;
  state.reserve(N);
  for (std::size_t i = 0; i < N; ++i) {
    ClientState s{i, clients[i], server.theta, HistoryWindow(cfg.H), {}, 0};
    if (adaptive) {
      s.sizer.Phi = adaptive->Phi;
      s.sizer.phi = adaptive->phi;
      s.sizer.n_min = adaptive->n_min;
      s.sizer.n_max = adaptive->n_max;
    }
    state.push_back(std::move(s));
  }

  RunTrace trace;
  trace.rows.push_back(make_row(0, server.theta, clients, cfg, opts, start));
  trace.rows.back().client_n.assign(N, 0);

  std::vector<Draw> draws(N);
  std::vector<std::optional<JacobianEstimate>> jacs(N);
  std::vector<IterationInfo> infos(N);

  for (std::size_t t = 0; t < cfg.T; ++t) {
    if (t % cfg.R == 0) {
      server.enrolled = select_enrolled(t, cfg, server.enrolled);
      for (std::size_t i : server.enrolled) state[i].theta = server.theta;
    }
    const auto& I = server.enrolled;
    std::size_t removed_now = 0, drawn_now = 0;

    // phase 1: sampling, filtering, f_hat
    for (std::size_t i : I) {
      ClientState& cs = state[i];
      const Environment& env = *cs.spec.env;
      Rng sample_rng(cfg.seed, i, "sample", t);
      Rng coin_rng(cfg.seed, i, "coin", t);
      SampleBatch batch = draw_batch(cs.spec, cs.theta, cs.spec.n, sample_rng, coin_rng);
      Draw& d = draws[i];
      IterationInfo& info = infos[i];
      info = IterationInfo{t, i, batch.size(), 0, ContaminationOracle::count(batch), 0, false, false};
      if (filter) {
        const auto& rf = *cfg.robust_filter;
        const DenseMatrix grads = per_sample_gradients(batch, cs.theta, env);
        std::size_t passes = 0;
        const auto kept = robust_filter_rows(grads, rf.C, rf.J, rf.B, &passes);
        d.g1.assign(env.dim(), 0.0);
        d.loss_mean = 0.0;
        d.max_grad = 0.0;
        for (std::size_t j : kept) {
          axpy(1.0, grads.row(j), d.g1);
          d.loss_mean += env.loss(batch.z(j), cs.theta);
          d.max_grad = std::max(d.max_grad, norm(grads.row(j)));
        }
        for (double& x : d.g1) x /= static_cast<double>(kept.size());
        d.loss_mean /= static_cast<double>(kept.size());
        d.removed = batch.size() - kept.size();
        d.clean = batch.subset(kept);
        info.contaminants_removed = info.contaminants_drawn - ContaminationOracle::count(d.clean);
      } else {
        const L1Estimate l1 = grad_l1(batch, cs.theta, env);
        d.g1 = l1.g1;
        d.loss_mean = l1.loss_mean;
        d.removed = 0;
        if (adaptive) d.max_grad = max_row_norm(per_sample_gradients(batch, cs.theta, env));
        d.clean = std::move(batch);
      }
      check_finite(d.g1, t, "gradient");
      info.n_removed = d.removed;
      removed_now += d.removed;
      drawn_now += info.n_drawn;
      if (mode != Mode::PFL) {
        d.f_hat = estimate_f_hat(env, d.clean);
        cs.window.push(cs.theta, d.f_hat);
      }
    }

    // phase 2: Jacobians (warm-up: the first H + 1 active steps use g1 only)
    for (std::size_t i : I) jacs[i].reset();
    if (mode != Mode::PFL) {
      auto ready = [&](std::size_t i) { return state[i].steps > cfg.H && state[i].window.full(); };
      if (server_side) {
        std::map<std::size_t, std::vector<std::size_t>> clusters;
        for (std::size_t i : I)
          if (ready(i)) clusters[(*cfg.server_jacobian)[i]].push_back(i);
        for (const auto& [cluster, members] : clusters) {
          std::vector<const HistoryWindow*> windows;
          for (std::size_t i : members) windows.push_back(&state[i].window);
          const JacobianEstimate est = server_jacobian(windows, cfg.rank_tol);
          for (std::size_t i : members) jacs[i] = est;
        }
      } else {
        for (std::size_t i : I)
          if (ready(i)) jacs[i] = fd_jacobian(state[i].window, cfg.rank_tol);
      }
    }

    // phase 3: update
    for (std::size_t i : I) {
      ClientState& cs = state[i];
      const Environment& env = *cs.spec.env;
      Draw& d = draws[i];
      Vector g = d.g1;
      if (jacs[i] && jacs[i]->usable()) {
        if (!jacs[i]->matrix.all_finite()) throw NumericError(fmt::format("non-finite Jacobian at iteration {}", t));
        const Vector g2 = grad_l2(d.clean, cs.theta, env, jacs[i]->matrix, d.f_hat);
        check_finite(g2, t, "second gradient term");
        axpy(1.0, g2, g);
        infos[i].used_jacobian = true;
      } else if (jacs[i]) {
        infos[i].jacobian_fallback = true;
      }
      if (adaptive) {
        const JacobianEstimate none{DenseMatrix(), 0.0, JacobianSource::Local, false, true, {}};
        cs.sizer.observe(d.loss_mean, d.max_grad, env.sample_variance(d.clean), jacs[i] ? *jacs[i] : none,
                         cs.theta);
        if (cs.window.full()) {
          const double dtn = delta_theta(cs.window).frobenius_norm();
          if (dtn > 0.0) cs.spec.n = adaptive_sample_size(cs.sizer, cfg.H, cfg.eta, dtn);
        }
      }
      Vector next = cs.theta;
      axpy(-cfg.eta, g, next);
      cs.theta = project(next, cfg.projection);
      check_finite(cs.theta, t, "model");
      cs.steps += 1;
      if (opts.observer) opts.observer(infos[i]);
    }

    TraceRow row;
    if ((t + 1) % cfg.R == 0) {
      std::vector<ModelVector> models;
      Vector weights;
      for (std::size_t i : I) {
        models.push_back(state[i].theta);
        weights.push_back(state[i].spec.alpha);
      }
      server.theta = project(weighted_aggregate(models, weights), cfg.projection);
      server.round += 1;
      row = make_row(t + 1, server.theta, clients, cfg, opts, start);
    } else {
      // the global model only moves at aggregation
      row = trace.rows.back();
      row.t = t + 1;
      row.wall_time = seconds_since(start);
    }
    row.enrolled = I.size();
    row.removed_total = removed_now;
    row.n_total = drawn_now;
    row.client_n.assign(N, 0);
    for (std::size_t i : I) row.client_n[i] = draws[i].clean.size() + draws[i].removed;
    trace.rows.push_back(std::move(row));
  }
  return trace;
}

}  // namespace

ModelVector initial_theta(const ExperimentConfig& cfg) {
  const Vector start = cfg.theta0.empty() ? Vector(cfg.dim(), 0.0) : cfg.theta0;
  return project(start, cfg.projection);
}

RunTrace run_profl(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients, const RunOptions& opts) {
  return run_federated(cfg, std::move(clients), opts, Mode::ProFL);
}

RunTrace run_pofl(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients, const RunOptions& opts) {
  return run_federated(cfg, std::move(clients), opts, Mode::PoFL);
}

RunTrace run_pfl(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients, const RunOptions& opts) {
  return run_federated(cfg, std::move(clients), opts, Mode::PFL);
}

RunTrace run_centralized_pg(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients,
                            const RunOptions& opts) {
  cfg.validate();
  check_clients(cfg, clients);
  const auto start = Clock::now();
  for (const auto& c : clients)
    if (c.env->kind() != clients.front().env->kind() || c.env->sample_width() != clients.front().env->sample_width())
      throw ConfigError("centralized PG needs every client to share one environment family");
  // the pooled data is modelled with the first client's family
  const Environment& model = *clients.front().env;

  ModelVector theta = initial_theta(cfg);
  HistoryWindow window(cfg.H);
  RunTrace trace;
  trace.rows.push_back(make_row(0, theta, clients, cfg, opts, start));
  trace.rows.back().client_n.assign(clients.size(), 0);

  for (std::size_t t = 0; t < cfg.T; ++t) {
    SampleBatch pooled(model.sample_width());
    for (std::size_t i = 0; i < clients.size(); ++i) {
      Rng sample_rng(cfg.seed, i, "sample", t);
      Rng coin_rng(cfg.seed, i, "coin", t);
      const SampleBatch b = draw_batch(clients[i], theta, clients[i].n, sample_rng, coin_rng);
      for (std::size_t j = 0; j < b.size(); ++j) pooled.append(b.z(j), b.group(j), ContaminationOracle::is_contaminant(b, j));
    }
    const L1Estimate l1 = grad_l1(pooled, theta, model);
    check_finite(l1.g1, t, "gradient");
    const Vector f_hat = estimate_f_hat(model, pooled);
    window.push(theta, f_hat);
    Vector g = l1.g1;
    if (t > cfg.H && window.full()) {
      const JacobianEstimate jac = fd_jacobian(window, cfg.rank_tol);
      if (jac.usable()) {
        const Vector g2 = grad_l2(pooled, theta, model, jac.matrix, f_hat);
        check_finite(g2, t, "second gradient term");
        axpy(1.0, g2, g);
      }
    }
    if (opts.observer)
      opts.observer(IterationInfo{t, 0, pooled.size(), 0, ContaminationOracle::count(pooled), 0, false, false});
    axpy(-cfg.eta, g, theta);
    theta = project(theta, cfg.projection);
    check_finite(theta, t, "model");

    TraceRow row = make_row(t + 1, theta, clients, cfg, opts, start);
    row.enrolled = clients.size();
    row.n_total = pooled.size();
    row.client_n.resize(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) row.client_n[i] = clients[i].n;
    trace.rows.push_back(std::move(row));
  }
  return trace;
}

RunTrace run_experiment(const ExperimentConfig& cfg, std::vector<ContaminatedClient> clients,
                        const RunOptions& opts) {
  switch (cfg.algorithm) {
    case Algorithm::ProFL: return run_profl(cfg, std::move(clients), opts);
    case Algorithm::PoFL: return run_pofl(cfg, std::move(clients), opts);
    case Algorithm::PFL: return run_pfl(cfg, std::move(clients), opts);
    case Algorithm::CentralizedPG: return run_centralized_pg(cfg, std::move(clients), opts);
  }
  throw ConfigError("unknown algorithm");
}

RunTrace run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  return run_experiment(cfg, make_clients(cfg), opts);
}

}  // namespace perffl
