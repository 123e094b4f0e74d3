#pragma once

// ADMM for the fusion-penalized multinomial logistic objective.
//
// Every undirected similarity edge {i, j} gets two auxiliary copies
// z_{i->j} ~ b_i and z_{j->i} ~ b_j with scaled duals u. One iteration is
//   primal:  (B, beta0) <- argmin g(B, beta0)          (L-BFGS, warm started)
//   aux:     closed-form two-vector prox per edge      (theta rule)
//   dual:    u_{i->j} += z_{i->j} - b_i
// and the loop stops once both residual norms drop below sqrt(c (d + 2l)) * eps.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "covclust/core_model.hpp"
#include "covclust/errors.hpp"
#include "covclust/lbfgs.hpp"

namespace covclust {

struct AdmmState {
  ModelParams params;
  Matrix z;  // c x 2l, column e is the directed copy for edge id e
  Matrix u;  // c x 2l, scaled duals
  double rho = 1.0;
  int k = 0;
  bool converged = false;
  std::vector<std::pair<double, double>> residual_history;  // (primal_norm, dual_norm)

  /// Zero parameters, zero copies, zero duals.
  static AdmmState zeros(int c, const SimilarityGraph& graph, double rho);
  /// Seeded N(0, scale^2) coefficients with copies matched to them and zero duals.
  static AdmmState random(int c, const SimilarityGraph& graph, double rho, std::uint64_t seed, double scale = 1.0);

  void check_against(const SimilarityGraph& graph) const;
};

struct SolverConfig {
  double rho = 1.0;
  double eps = 1e-5;
  int max_iter = 1000;
  double lambda = kDefaultLambda;
  double nu = 0.0;
  double primal_grad_tol = 1e-6;  // scaled by sqrt(c * d)
  int primal_max_iter = 200;
  int lbfgs_memory = 10;
  std::uint64_t seed = 0;
  bool random_init = false;  // cold start from AdmmState::random instead of zeros

  void validate() const;
  double scaled_primal_tol(Index c, Index d) const { return primal_grad_tol * std::sqrt(double(c) * double(d)); }
};

struct EdgeAggregates {
  double q_all = 0.0;
  Matrix q_up;               // c x d, column i is sum_j q_ij
  std::vector<int> degrees;  // d_i
};

struct PrimalResult {
  ModelParams params;
  double g_value = 0.0;
  double grad_inf_norm = 0.0;
  int inner_iters = 0;
  LbfgsStatus status = LbfgsStatus::Converged;
};

struct IterationRecord {
  int k = 0;
  double primal_norm = 0.0;
  double dual_norm = 0.0;
  double g_value = 0.0;
  int inner_iters = 0;
};

struct SolveDiagnostics {
  bool converged = false;
  int iterations = 0;
  double threshold = 0.0;
  std::vector<IterationRecord> history;
  Vector last_theta;  // per undirected edge, from the final aux update
};

/// Raised when the objective turns non-finite; carries the last finite state.
struct AdmmFailure : SolverError {
  AdmmFailure(const std::string& what, AdmmState state) : SolverError(what), last_state(std::move(state)) {}
  AdmmState last_state;
};

EdgeAggregates compute_aggregates(const AdmmState& state, const SimilarityGraph& graph);

/// Quadratic coupling (rho/2) * sum_i sum_j ||q_ij - b_i||^2 by the O(d c) expansion.
double coupling_term(const Matrix& B, const EdgeAggregates& agg, double rho);

/// g(B, beta0) = -sum log f~ + coupling_term; f~ folds the lambda ||B||^2 term in.
double primal_objective_g(const ModelParams& params, const Dataset& data, const EdgeAggregates& agg,
                          double lambda, double rho, ModelParams* grad = nullptr);

PrimalResult primal_update(const AdmmState& state, const Dataset& data, const SimilarityGraph& graph,
                           const SolverConfig& config);

/// Rewrites state.z from the current params and duals; returns theta per undirected edge.
Vector aux_update(AdmmState& state, const SimilarityGraph& graph, const SolverConfig& config);

/// Theta for one edge given h = ||(b_i - u_ij) - (b_j - u_ji)||.
double edge_theta(double nu_weight, double rho, double h);

void dual_update(AdmmState& state, const SimilarityGraph& graph);

std::pair<double, double> residuals(const Matrix& z_prev, const AdmmState& state, const SimilarityGraph& graph);

double stopping_threshold(Index c, Index d, Index l, double eps);

using IterationSink = std::function<void(const IterationRecord&)>;

std::pair<AdmmState, SolveDiagnostics> solve(const Dataset& data, const SimilarityGraph& graph,
                                             const SolverConfig& config,
                                             const std::optional<AdmmState>& warm_start = std::nullopt,
                                             const IterationSink& sink = {});

// Versioned binary checkpoint of (B, beta0, z, u) plus counters.
struct CheckpointMeta {
  double nu = 0.0;
  double lambda = 0.0;
};
void save_checkpoint(const std::string& path, const AdmmState& state, const CheckpointMeta& meta);
std::pair<AdmmState, CheckpointMeta> load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------

inline AdmmState AdmmState::zeros(int c, const SimilarityGraph& graph, double rho) {
  AdmmState s;
  s.params = ModelParams::zeros(c, graph.d());
  s.z = Matrix::Zero(c, graph.directed_count());
  s.u = Matrix::Zero(c, graph.directed_count());
  s.rho = rho;
  return s;
}

inline AdmmState AdmmState::random(int c, const SimilarityGraph& graph, double rho, std::uint64_t seed,
                                   double scale) {
  AdmmState s = zeros(c, graph, rho);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (Index j = 0; j < s.params.B.cols(); ++j)
    for (Index i = 0; i < s.params.B.rows(); ++i) s.params.B(i, j) = normal(rng);
  for (Index i = 0; i < s.params.beta0.size(); ++i) s.params.beta0(i) = normal(rng);
  for (Index e = 0; e < graph.directed_count(); ++e) s.z.col(e) = s.params.B.col(graph.source(e));
  return s;
}

inline void AdmmState::check_against(const SimilarityGraph& graph) const {
  const Index c = params.B.rows();
  if (params.B.cols() != graph.d() || params.beta0.size() != c) {
    throw ConsistencyError("ADMM state parameters do not match the graph's covariate count");
  }
  if (z.rows() != c || u.rows() != c || z.cols() != graph.directed_count() || u.cols() != graph.directed_count()) {
    throw ConsistencyError("ADMM state holds " + std::to_string(z.cols()) + " directed edge vectors, graph has " +
                           std::to_string(graph.directed_count()));
  }
  if (!(rho > 0.0)) throw ConsistencyError("ADMM penalty rho must be positive");
}

inline void SolverConfig::validate() const {
  if (!(rho > 0.0) || !std::isfinite(rho)) throw InputError("rho must be positive");
  if (!(eps > 0.0)) throw InputError("eps must be positive");
  if (max_iter < 1) throw InputError("max_iter must be at least 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be nonnegative");
  if (!(nu >= 0.0) || !std::isfinite(nu)) throw InputError("nu must be nonnegative");
  if (!(primal_grad_tol > 0.0)) throw InputError("primal gradient tolerance must be positive");
  if (primal_max_iter < 1 || lbfgs_memory < 1) throw InputError("primal iteration cap and memory must be positive");
}

inline EdgeAggregates compute_aggregates(const AdmmState& state, const SimilarityGraph& graph) {
  state.check_against(graph);
  const Index c = state.params.B.rows();
  EdgeAggregates agg;
  agg.q_up = Matrix::Zero(c, graph.d());
  agg.degrees.resize(graph.d());
  for (int i = 0; i < graph.d(); ++i) {
    agg.degrees[i] = graph.degree(i);
    for (int j = 0; j < graph.degree(i); ++j) {
      const Index e = graph.directed_id(i, j);
      const Vector q = state.z.col(e) + state.u.col(e);
      agg.q_all += q.squaredNorm();
      agg.q_up.col(i) += q;
    }
  }
  return agg;
}

inline double coupling_term(const Matrix& B, const EdgeAggregates& agg, double rho) {
  double cross = 0.0;
  double diag = 0.0;
  for (Index i = 0; i < B.cols(); ++i) {
    cross += B.col(i).dot(agg.q_up.col(i));
    diag += agg.degrees[i] * B.col(i).squaredNorm();
  }
  return 0.5 * rho * (agg.q_all - 2.0 * cross + diag);
}

inline double primal_objective_g(const ModelParams& params, const Dataset& data, const EdgeAggregates& agg,
                                 double lambda, double rho, ModelParams* grad) {
  detail::check_shapes(params, data.d(), data.c);
  Matrix* gB = grad ? &grad->B : nullptr;
  Vector* gb = grad ? &grad->beta0 : nullptr;
  double value = detail::logistic_nll(data.X, data.y, params.B, params.beta0, gB, gb);
  value += lambda * params.B.squaredNorm() + coupling_term(params.B, agg, rho);
  if (grad) {
    grad->B += 2.0 * lambda * params.B;
    for (Index i = 0; i < params.B.cols(); ++i) {
      grad->B.col(i) -= rho * (agg.q_up.col(i) - agg.degrees[i] * params.B.col(i));
    }
  }
  return value;
}

inline PrimalResult primal_update(const AdmmState& state, const Dataset& data, const SimilarityGraph& graph,
                                  const SolverConfig& config) {
  const EdgeAggregates agg = compute_aggregates(state, graph);
  const Index c = data.c;
  const Index d = data.d();
  const Index nB = c * d;

  Vector w0(nB + c);
  w0.head(nB) = state.params.B.reshaped();
  w0.tail(c) = state.params.beta0;

  ModelParams work = ModelParams::zeros(c, d);
  ModelParams grad;
  auto fg = [&](const Vector& w, Vector& gw) {
    work.B = w.head(nB).reshaped(c, d);
    work.beta0 = w.tail(c);
    const double value = primal_objective_g(work, data, agg, config.lambda, state.rho, &grad);
    gw.resize(w.size());
    gw.head(nB) = grad.B.reshaped();
    gw.tail(c) = grad.beta0;
    return value;
  };

  LbfgsOptions opt;
  opt.memory = config.lbfgs_memory;
  opt.max_iter = config.primal_max_iter;
  opt.grad_tol = config.scaled_primal_tol(c, d);
  LbfgsResult r = minimize_lbfgs(fg, std::move(w0), opt);
  if (r.status == LbfgsStatus::NonFinite || r.status == LbfgsStatus::LineSearchFailed) {
    throw SolverError("primal update: L-BFGS " + std::string(to_string(r.status)) + " after " +
                      std::to_string(r.iterations) + " iterations (g=" + std::to_string(r.f) +
                      ", |grad|=" + std::to_string(r.grad_norm) + ", restarts=" + std::to_string(r.restarts) +
                      ", tol=" + std::to_string(opt.grad_tol) + ")");
  }
  PrimalResult out;
  out.params.B = r.x.head(nB).reshaped(c, d);
  out.params.beta0 = r.x.tail(c);
  out.g_value = r.f;
  out.grad_inf_norm = r.grad_inf_norm;
  out.inner_iters = r.iterations;
  out.status = r.status;
  return out;
}

inline double edge_theta(double nu_weight, double rho, double h) {
  if (h == 0.0) return 0.5;
  return std::max(1.0 - nu_weight / (rho * h), 0.5);
}

inline Vector aux_update(AdmmState& state, const SimilarityGraph& graph, const SolverConfig& config) {
  state.check_against(graph);
  const auto& edges = graph.edges();
  Vector theta(static_cast<Index>(edges.size()));
  const Matrix& B = state.params.B;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    const Vector a = B.col(e.i) - state.u.col(e.ij);
    const Vector b = B.col(e.j) - state.u.col(e.ji);
    const double t = edge_theta(config.nu * e.weight, state.rho, (a - b).norm());
    theta(static_cast<Index>(k)) = t;
    if (t == 0.5) {
      const Vector mid = 0.5 * (a + b);
      state.z.col(e.ij) = mid;
      state.z.col(e.ji) = mid;
    } else {
      state.z.col(e.ij) = t * a + (1.0 - t) * b;
      state.z.col(e.ji) = (1.0 - t) * a + t * b;
    }
  }
  return theta;
}

inline void dual_update(AdmmState& state, const SimilarityGraph& graph) {
  state.check_against(graph);
  for (Index e = 0; e < graph.directed_count(); ++e) {
    state.u.col(e) += state.z.col(e) - state.params.B.col(graph.source(e));
  }
}

inline std::pair<double, double> residuals(const Matrix& z_prev, const AdmmState& state,
                                           const SimilarityGraph& graph) {
  state.check_against(graph);
  if (z_prev.rows() != state.z.rows() || z_prev.cols() != state.z.cols()) {
    throw ConsistencyError("previous auxiliary block has the wrong shape");
  }
  double r2 = 0.0;
  for (Index e = 0; e < graph.directed_count(); ++e) {
    r2 += (state.z.col(e) - state.params.B.col(graph.source(e))).squaredNorm();
  }
  const double s2 = state.rho * (state.z - z_prev).squaredNorm();
  return {std::sqrt(r2), std::sqrt(s2)};
}

inline double stopping_threshold(Index c, Index d, Index l, double eps) {
  return std::sqrt(double(c) * (double(d) + 2.0 * double(l))) * eps;
}

inline std::pair<AdmmState, SolveDiagnostics> solve(const Dataset& data, const SimilarityGraph& graph,
                                                    const SolverConfig& config,
                                                    const std::optional<AdmmState>& warm_start,
                                                    const IterationSink& sink) {
  config.validate();
  if (graph.d() != data.d()) throw DimensionError("graph covariate count differs from dataset");

  AdmmState state;
  if (warm_start) {
    state = *warm_start;
    state.check_against(graph);
    if (state.params.B.rows() != data.c) throw ConsistencyError("warm start has the wrong class count");
    state.rho = config.rho;
  } else if (config.random_init) {
    state = AdmmState::random(data.c, graph, config.rho, config.seed);
  } else {
    state = AdmmState::zeros(data.c, graph, config.rho);
  }
  state.k = 0;
  state.converged = false;
  state.residual_history.clear();

  SolveDiagnostics diag;
  diag.threshold = stopping_threshold(data.c, data.d(), graph.edge_count(), config.eps);
  Matrix z_prev;
  while (state.k < config.max_iter) {
    PrimalResult primal = primal_update(state, data, graph, config);
    if (!std::isfinite(primal.g_value) || !primal.params.all_finite()) {
      throw AdmmFailure("non-finite primal objective at iteration " + std::to_string(state.k + 1), state);
    }
    state.params = std::move(primal.params);
    z_prev = state.z;
    diag.last_theta = aux_update(state, graph, config);
    dual_update(state, graph);
    ++state.k;

    const auto [rn, sn] = residuals(z_prev, state, graph);
    state.residual_history.emplace_back(rn, sn);
    IterationRecord rec{state.k, rn, sn, primal.g_value, primal.inner_iters};
    diag.history.push_back(rec);
    if (sink) sink(rec);
    if (!std::isfinite(rn) || !std::isfinite(sn)) {
      throw AdmmFailure("non-finite residuals at iteration " + std::to_string(state.k), state);
    }
    if (rn < diag.threshold && sn < diag.threshold) {
      state.converged = true;
      break;
    }
  }
  diag.converged = state.converged;
  diag.iterations = state.k;
  return {std::move(state), std::move(diag)};
}

// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'C', 'C', 'A', 'D', 'M', 'M', '\0', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw InputError("checkpoint truncated");
  return v;
}
inline void write_block(std::ostream& os, const double* p, Index count) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(count * sizeof(double)));
}
inline void read_block(std::istream& is, double* p, Index count) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw InputError("checkpoint truncated");
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const AdmmState& state, const CheckpointMeta& meta) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot write checkpoint " + tmp);
    os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    detail::write_pod(os, detail::kCheckpointVersion);
    detail::write_pod(os, std::uint32_t{0});
    detail::write_pod(os, static_cast<std::uint64_t>(state.params.B.rows()));
    detail::write_pod(os, static_cast<std::uint64_t>(state.params.B.cols()));
    detail::write_pod(os, static_cast<std::uint64_t>(state.z.cols()));
    detail::write_pod(os, static_cast<std::int64_t>(state.k));
    detail::write_pod(os, static_cast<std::uint64_t>(state.converged ? 1 : 0));
    detail::write_pod(os, state.rho);
    detail::write_pod(os, meta.nu);
    detail::write_pod(os, meta.lambda);
    detail::write_block(os, state.params.B.data(), state.params.B.size());
    detail::write_block(os, state.params.beta0.data(), state.params.beta0.size());
    detail::write_block(os, state.z.data(), state.z.size());
    detail::write_block(os, state.u.data(), state.u.size());
    if (!os) throw InputError("failed writing checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw InputError("cannot move checkpoint into " + path);
}

inline std::pair<AdmmState, CheckpointMeta> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, detail::kCheckpointMagic)) throw InputError(path + ": not a checkpoint");
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != detail::kCheckpointVersion) {
    throw InputError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  detail::read_pod<std::uint32_t>(is);
  const auto c = static_cast<Index>(detail::read_pod<std::uint64_t>(is));
  const auto d = static_cast<Index>(detail::read_pod<std::uint64_t>(is));
  const auto directed = static_cast<Index>(detail::read_pod<std::uint64_t>(is));
  if (c < 1 || d < 1 || c > (1 << 20) || d > (1 << 26) || directed > (Index{1} << 40)) {
    throw InputError(path + ": implausible checkpoint shape");
  }
  AdmmState s;
  s.k = static_cast<int>(detail::read_pod<std::int64_t>(is));
  s.converged = detail::read_pod<std::uint64_t>(is) != 0;
  s.rho = detail::read_pod<double>(is);
  CheckpointMeta meta;
  meta.nu = detail::read_pod<double>(is);
  meta.lambda = detail::read_pod<double>(is);
  s.params = ModelParams::zeros(c, d);
  s.z.resize(c, directed);
  s.u.resize(c, directed);
  detail::read_block(is, s.params.B.data(), s.params.B.size());
  detail::read_block(is, s.params.beta0.data(), s.params.beta0.size());
  detail::read_block(is, s.z.data(), s.z.size());
  detail::read_block(is, s.u.data(), s.u.size());
  return {std::move(s), meta};
}

}  // namespace covclust
