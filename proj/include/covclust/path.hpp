#pragma once

// Regularization path over the fusion weight nu.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "covclust/admm.hpp"
#include "covclust/clustering.hpp"
#include "covclust/model_select.hpp"

namespace covclust {

/// [n * 2^(-0.1 a) for a = 0..a_max], descending. `stride` > 1 keeps every stride-th a.
inline std::vector<double> nu_grid(int n, int a_max = 299, int stride = 1) {
  if (n < 1) throw InputError("nu grid needs n >= 1");
  if (a_max < 0 || stride < 1) throw InputError("nu grid needs a_max >= 0 and stride >= 1");
  std::vector<double> grid;
  for (int a = 0; a <= a_max; a += stride) grid.push_back(double(n) * std::exp2(-0.1 * a));
  return grid;
}

struct PathRecord {
  double nu = 0.0;
  Clustering clustering;
  bool converged = false;
  bool failed = false;
  bool duplicate_of_previous = false;
  bool resumed = false;
  bool best = false;
  int iterations = 0;
  double wall_seconds = 0.0;
  std::string error;
  std::shared_ptr<const ModelScore> score;
};

struct PathOptions {
  bool warm_start = true;
  bool early_exit = false;  // stop once every covariate is its own cluster
  int threads = 1;          // only used when warm starts are off
};

/// Optional per-point hooks, used by the CLI for checkpoint/resume and logging.
struct PathHooks {
  /// Returns a previously finished state for grid index `index`, if any.
  std::function<std::optional<AdmmState>(std::size_t index, double nu)> resume;
  /// Called after each freshly solved point.
  std::function<void(std::size_t index, const PathRecord&, const AdmmState&)> on_point;
  /// Per-iteration sink for the solve at grid index `index`.
  std::function<IterationSink(std::size_t index, double nu)> iteration_sink;
};

namespace detail {

/// Runs fn(i) for i in [0, count) over `threads` workers. Each index is
/// independent, so results do not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

/// Solves one grid point, filling `rec`; returns the final state on success.
inline std::optional<AdmmState> solve_point(const Dataset& data, const SimilarityGraph& graph, const SolverConfig& config,
                                            std::size_t idx, PathRecord& rec, const std::optional<AdmmState>& warm,
                                            const PathHooks& hooks) {
  std::optional<AdmmState> resumed = hooks.resume ? hooks.resume(idx, rec.nu) : std::nullopt;
  if (resumed) {
    rec.resumed = true;
    rec.converged = resumed->converged;
    rec.iterations = resumed->k;
    rec.clustering = extract_clustering(*resumed, graph);
    return resumed;
  }
  SolverConfig cfg = config;
  cfg.nu = rec.nu;
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<AdmmState> out;
  try {
    const IterationSink sink = hooks.iteration_sink ? hooks.iteration_sink(idx, rec.nu) : IterationSink{};
    auto [state, diag] = solve(data, graph, cfg, warm, sink);
    rec.converged = diag.converged;
    rec.iterations = diag.iterations;
    rec.clustering = extract_clustering(state, graph);
    if (hooks.on_point) hooks.on_point(idx, rec, state);
    out = std::move(state);
  } catch (const SolverError& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline void flag_duplicates(std::vector<PathRecord>& records) {
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& prev = records[r - 1];
    records[r].duplicate_of_previous =
        !records[r].failed && !prev.failed && prev.clustering == records[r].clustering;
  }
}

}  // namespace detail

/// Solves the grid in the given order (descending by convention), carrying the
/// whole ADMM state (B, beta0, z, u) forward when warm starts are on. Without
/// warm starts the points are independent and run on `opt.threads` workers;
/// hooks must then tolerate concurrent calls for distinct indices.
inline std::vector<PathRecord> run_path(const Dataset& data, const SimilarityGraph& graph, const SolverConfig& config,
                                        const std::vector<double>& grid, const PathOptions& opt = {},
                                        const PathHooks& hooks = {}) {
  if (grid.empty()) throw InputError("empty nu grid");
  const auto is_finest = [&](const PathRecord& r) { return !r.failed && r.clustering.m == graph.d(); };
  std::vector<PathRecord> records;
  if (!opt.warm_start && opt.threads > 1) {
    records.resize(grid.size());
    detail::parallel_for(grid.size(), opt.threads, [&](std::size_t idx) {
      records[idx].nu = grid[idx];
      detail::solve_point(data, graph, config, idx, records[idx], std::nullopt, hooks);
    });
    if (opt.early_exit) {
      const auto it = std::find_if(records.begin(), records.end(), is_finest);
      if (it != records.end()) records.erase(it + 1, records.end());
    }
  } else {
    std::optional<AdmmState> warm;
    for (std::size_t idx = 0; idx < grid.size(); ++idx) {
      PathRecord rec;
      rec.nu = grid[idx];
      auto state = detail::solve_point(data, graph, config, idx, rec, opt.warm_start ? warm : std::nullopt, hooks);
      if (state) warm = std::move(state);
      const bool finest = is_finest(rec);
      records.push_back(std::move(rec));
      if (opt.early_exit && finest) break;
    }
  }
  detail::flag_duplicates(records);
  return records;
}

/// Pairs (larger nu index, smaller nu index) where the larger nu produced strictly more clusters.
inline std::vector<std::pair<std::size_t, std::size_t>> monotonicity_violations(const std::vector<PathRecord>& records) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t a = 0; a < records.size(); ++a)
    for (std::size_t b = 0; b < records.size(); ++b)
      if (!records[a].failed && !records[b].failed && records[a].nu > records[b].nu &&
          records[a].clustering.m > records[b].clustering.m)
        out.emplace_back(a, b);
  return out;
}

struct ScorePathResult {
  std::size_t fits = 0;
  std::optional<std::size_t> best;
  std::vector<std::string> warnings;
};


/// Scores each distinct clustering once; records with equal assignments share
/// one score object. Flags the best record (highest log marginal, then
/// smaller m, then smaller nu).
inline ScorePathResult score_path(const Dataset& data, std::vector<PathRecord>& records, double sigma,
                                  const ScoreOptions& opt = {}, int threads = 1) {
  ScorePathResult out;
  std::map<std::vector<int>, std::size_t> unique_index;
  std::vector<std::size_t> representative;
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (records[r].failed) continue;
    auto [it, inserted] = unique_index.emplace(records[r].clustering.assignment, representative.size());
    if (inserted) representative.push_back(r);
  }
  std::vector<std::shared_ptr<const ModelScore>> scores(representative.size());
  std::vector<std::string> errors(representative.size());
  detail::parallel_for(representative.size(), threads, [&](std::size_t u) {
    const PathRecord& rec = records[representative[u]];
    try {
      auto s = std::make_shared<ModelScore>(log_marginal(data, rec.clustering, sigma, opt));
      s->nu_origin = rec.nu;
      scores[u] = std::move(s);
    } catch (const std::runtime_error& e) {
      errors[u] = e.what();
    }
  });
  out.fits = representative.size();
  for (std::size_t u = 0; u < representative.size(); ++u) {
    if (!errors[u].empty()) {
      out.warnings.push_back("nu=" + std::to_string(records[representative[u]].nu) + ": " + errors[u]);
    }
  }
  for (auto& rec : records) {
    rec.best = false;
    if (rec.failed) continue;
    rec.score = scores[unique_index.at(rec.clustering.assignment)];
  }
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& s = records[r].score;
    if (!s) continue;
    if (!out.best) {
      out.best = r;
      continue;
    }
    const auto& b = *records[*out.best].score;
    const bool better = s->log_marginal > b.log_marginal ||
                        (s->log_marginal == b.log_marginal &&
                         (s->m < b.m || (s->m == b.m && records[r].nu < records[*out.best].nu)));
    if (better) out.best = r;
  }
  if (out.best) records[*out.best].best = true;
  return out;
}

}  // namespace covclust
