#pragma once

// Scoring a covariate clustering by the Laplace-approximated marginal
// likelihood of the logistic model restricted to cluster-summed covariates.
//
// Prior: every entry of B (c x m) is N(0, sigma^2); the intercepts are fitted
// (empirical Bayes) and not integrated. The determinant uses the diagonal of
// the Hessian unless `ScoreOptions::full_hessian` is set.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "covclust/clustering.hpp"
#include "covclust/core_model.hpp"
#include "covclust/errors.hpp"
#include "covclust/lbfgs.hpp"

namespace covclust {

struct ReducedDataset {
  Dataset data;  // X is n x m, column j sums the members of cluster j
  int m() const { return static_cast<int>(data.X.cols()); }
};

struct MapFit {
  ModelParams params;        // c x m
  double log_posterior = 0;  // sum log f - ||B||^2 / (2 sigma^2), prior constant excluded
  double grad_inf_norm = 0;
  int iterations = 0;
};

struct ModelScore {
  double log_marginal = 0.0;
  int m = 0;
  ModelParams map_params;
  double sigma = 1.0;
  double nu_origin = 0.0;
  double log_likelihood = 0.0;
  double train_accuracy = 0.0;
  Clustering clustering;
};

struct MapOptions {
  double grad_tol = 1e-7;
  int max_iter = 2000;
  int memory = 10;
};

struct ScoreOptions {
  MapOptions map;
  bool full_hessian = false;
};

/// Default sigma grid {2^a : a = -4..6}.
inline std::vector<double> default_sigma_grid() {
  std::vector<double> grid;
  for (int a = -4; a <= 6; ++a) grid.push_back(std::ldexp(1.0, a));
  return grid;
}

inline ReducedDataset project_dataset(const Dataset& data, const Clustering& clustering) {
  if (clustering.d() != data.d()) {
    throw DimensionError("clustering covers " + std::to_string(clustering.d()) + " covariates, dataset has " +
                         std::to_string(data.d()));
  }
  ReducedDataset out;
  out.data.c = data.c;
  out.data.y = data.y;
  out.data.X = Matrix::Zero(data.n(), clustering.m);
  for (int i = 0; i < data.d(); ++i) out.data.X.col(clustering.assignment[i]) += data.X.col(i);
  return out;
}

/// Maximizes sum_s log f(y_s | x_s) - ||B||_F^2 / (2 sigma^2) over (B, beta0).
inline MapFit map_fit(const Dataset& data, double sigma, const MapOptions& opt = {},
                      const std::optional<ModelParams>& init = std::nullopt) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("sigma must be positive and finite");
  const Index c = data.c;
  const Index m = data.d();
  const Index nB = c * m;
  const double prec = 1.0 / (sigma * sigma);
  Vector w0 = Vector::Zero(nB + c);
  if (init) {
    detail::check_shapes(*init, m, data.c);
    w0.head(nB) = init->B.reshaped();
    w0.tail(c) = init->beta0;
  }
  Matrix B(c, m), gB;
  Vector b0(c), gb;
  auto fg = [&](const Vector& w, Vector& gw) {
    B = w.head(nB).reshaped(c, m);
    b0 = w.tail(c);
    double value = detail::logistic_nll(data.X, data.y, B, b0, &gB, &gb) + 0.5 * prec * B.squaredNorm();
    gB += prec * B;
    gw.resize(w.size());
    gw.head(nB) = gB.reshaped();
    gw.tail(c) = gb;
    return value;
  };
  LbfgsOptions lo;
  lo.grad_tol = opt.grad_tol;
  lo.max_iter = opt.max_iter;
  lo.memory = opt.memory;
  LbfgsResult r = minimize_lbfgs(fg, std::move(w0), lo);
  if (r.status == LbfgsStatus::NonFinite) throw SolverError("MAP fit produced a non-finite objective");
  if (r.status == LbfgsStatus::LineSearchFailed && r.grad_inf_norm > 1e3 * opt.grad_tol) {
    throw SolverError("MAP fit line search failed with |grad|_inf=" + std::to_string(r.grad_inf_norm));
  }
  MapFit fit;
  fit.params.B = r.x.head(nB).reshaped(c, m);
  fit.params.beta0 = r.x.tail(c);
  fit.log_posterior = -r.f;
  fit.grad_inf_norm = r.grad_inf_norm;
  fit.iterations = r.iterations;
  return fit;
}

inline MapFit map_fit(const ReducedDataset& reduced, double sigma, const MapOptions& opt = {}) {
  return map_fit(reduced.data, sigma, opt);
}

namespace detail {

inline Matrix softmax_rows(const Matrix& X, const ModelParams& params) {
  Matrix P = X * params.B.transpose();
  P.rowwise() += params.beta0.transpose();
  for (Index s = 0; s < P.rows(); ++s) {
    P.row(s).array() = (P.row(s).array() - P.row(s).maxCoeff()).exp();
    P.row(s) /= P.row(s).sum();
  }
  return P;
}

}  // namespace detail

/// Diagonal of the Hessian of the log joint in B, ordered class-major:
/// entry i*m + z belongs to class i and reduced covariate z.
inline Vector diag_hessian(const Dataset& reduced, const ModelParams& params, double sigma) {
  detail::check_shapes(params, reduced.d(), reduced.c);
  const Index c = reduced.c;
  const Index m = reduced.d();
  const Matrix P = detail::softmax_rows(reduced.X, params);
  const Matrix W = (P.array() * (1.0 - P.array())).matrix();  // n x c
  const Matrix X2 = reduced.X.array().square().matrix();      // n x m
  const Matrix curv = W.transpose() * X2;                     // c x m
  Vector h(c * m);
  const double prec = 1.0 / (sigma * sigma);
  for (Index i = 0; i < c; ++i)
    for (Index z = 0; z < m; ++z) h(i * m + z) = -curv(i, z) - prec;
  return h;
}

/// Full Hessian of the log joint in B (class-major ordering), for small problems.
inline Matrix full_hessian(const Dataset& reduced, const ModelParams& params, double sigma) {
  detail::check_shapes(params, reduced.d(), reduced.c);
  const Index c = reduced.c;
  const Index m = reduced.d();
  const Matrix P = detail::softmax_rows(reduced.X, params);
  Matrix H = Matrix::Zero(c * m, c * m);
  for (Index s = 0; s < reduced.n(); ++s) {
    const Vector x = reduced.X.row(s).transpose();
    const Matrix xx = x * x.transpose();
    for (Index i = 0; i < c; ++i)
      for (Index j = 0; j < c; ++j) {
        const double w = P(s, i) * ((i == j ? 1.0 : 0.0) - P(s, j));
        H.block(i * m, j * m, m, m) -= w * xx;
      }
  }
  H.diagonal().array() -= 1.0 / (sigma * sigma);
  return H;
}

/// Laplace log marginal likelihood of `clustering` restricted data.
inline ModelScore log_marginal(const Dataset& data, const Clustering& clustering, double sigma,
                               const ScoreOptions& opt = {}) {
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  const ReducedDataset reduced = project_dataset(data, clustering);
  const MapFit fit = map_fit(reduced.data, sigma, opt.map);
  const Index c = data.c;
  const Index m = reduced.m();
  const double cm = double(c * m);
  const double two_pi = 2.0 * std::numbers::pi;

  double log_det_neg_h = 0.0;
  if (opt.full_hessian) {
    const Matrix H = full_hessian(reduced.data, fit.params, sigma);
    Eigen::LLT<Matrix> llt(-H);
    if (llt.info() != Eigen::Success) throw NumericError("negative Hessian is not positive definite");
    log_det_neg_h = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  } else {
    const Vector h = diag_hessian(reduced.data, fit.params, sigma);
    if ((h.array() >= 0.0).any()) throw NumericError("non-negative Hessian diagonal entry; MAP fit failed");
    log_det_neg_h = (-h.array()).log().sum();
  }
  const double sq = fit.params.B.squaredNorm();
  const double log_prior = -0.5 * sq / (sigma * sigma) - 0.5 * cm * std::log(two_pi * sigma * sigma);
  const double loglik = -detail::logistic_nll(reduced.data.X, reduced.data.y, fit.params.B, fit.params.beta0);

  ModelScore score;
  score.log_marginal = 0.5 * cm * std::log(two_pi) - 0.5 * log_det_neg_h + log_prior + loglik;
  if (!std::isfinite(score.log_marginal)) throw NumericError("log marginal is not finite");
  score.m = static_cast<int>(m);
  score.map_params = fit.params;
  score.sigma = sigma;
  score.log_likelihood = loglik;
  score.train_accuracy =
      detail::argmax_accuracy(reduced.data.X, reduced.data.y, fit.params.B, fit.params.beta0);
  score.clustering = clustering;
  return score;
}

// ---------------------------------------------------------------------------
// Cross-validation helpers

/// Stratified fold ids: within each class, samples are dealt round-robin in index order.
inline std::vector<int> stratified_folds(const Dataset& data, int folds) {
  if (folds < 2) throw InputError("need at least two folds");
  if (data.n() < folds) throw InputError("fewer samples than folds");
  std::vector<int> fold(static_cast<std::size_t>(data.n()));
  std::vector<int> next(data.c, 0);
  int offset = 0;
  for (int cls = 0; cls < data.c; ++cls) {
    next[cls] = offset;
    offset += 1;
  }
  for (Index s = 0; s < data.n(); ++s) fold[s] = next[data.y[s]]++ % folds;
  return fold;
}

inline std::pair<Dataset, Dataset> split_fold(const Dataset& data, const std::vector<int>& fold, int k) {
  std::vector<Index> train, test;
  for (Index s = 0; s < data.n(); ++s) (fold[s] == k ? test : train).push_back(s);
  auto take = [&](const std::vector<Index>& rows) {
    Dataset out;
    out.c = data.c;
    out.X = data.X(rows, Eigen::all);
    out.y.reserve(rows.size());
    for (Index r : rows) out.y.push_back(data.y[r]);
    return out;
  };
  return {take(train), take(test)};
}

/// Per-fold mean held-out log-likelihood of the MAP model at `sigma`.
inline std::vector<double> cv_heldout_loglik(const Dataset& data, double sigma, int folds,
                                             const MapOptions& opt = {}) {
  const auto fold = stratified_folds(data, folds);
  std::vector<double> out;
  for (int k = 0; k < folds; ++k) {
    auto [train, test] = split_fold(data, fold, k);
    const MapFit fit = map_fit(train, sigma, opt);
    const double ll = -detail::logistic_nll(test.X, test.y, fit.params.B, fit.params.beta0);
    out.push_back(ll / double(std::max<Index>(1, test.n())));
  }
  return out;
}

/// sigma on the grid maximizing the mean held-out log-likelihood of the full
/// (unclustered) model. The first maximizer in grid order wins ties.
inline double select_sigma(const Dataset& data, int folds = 5, std::vector<double> grid = default_sigma_grid(),
                           const MapOptions& opt = {}) {
  if (grid.empty()) throw InputError("sigma grid is empty");
  for (double s : grid)
    if (!(s > 0.0) || !std::isfinite(s)) throw InputError("sigma grid entries must be positive and finite");
  if (grid.size() == 1) return grid.front();
  if (data.n() < folds) throw InputError("n=" + std::to_string(data.n()) + " is smaller than the fold count");
  const auto fold = stratified_folds(data, folds);
  std::vector<double> mean(grid.size(), 0.0);
  for (int k = 0; k < folds; ++k) {
    auto [train, test] = split_fold(data, fold, k);
    // Warm start along increasing sigma within a fold.
    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a] < grid[b]; });
    std::optional<ModelParams> warm;
    for (std::size_t idx : order) {
      const MapFit fit = map_fit(train, grid[idx], opt, warm);
      warm = fit.params;
      const double ll = -detail::logistic_nll(test.X, test.y, fit.params.B, fit.params.beta0);
      mean[idx] += ll / double(std::max<Index>(1, test.n())) / folds;
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (mean[i] > mean[best]) best = i;
  return grid[best];
}

struct RankedScores {
  std::vector<ModelScore> scores;
  std::vector<std::string> warnings;
};

/// Scores every clustering and sorts by log marginal (descending), then smaller
/// m, then smaller nu. Failed fits are skipped with a warning.
inline RankedScores rank_clusterings(const Dataset& data, const std::vector<std::pair<Clustering, double>>& clusterings,
                                     double sigma, const ScoreOptions& opt = {}) {
  if (clusterings.empty()) throw InputError("no clusterings to rank");
  RankedScores out;
  for (const auto& [cl, nu] : clusterings) {
    try {
      ModelScore s = log_marginal(data, cl, sigma, opt);
      s.nu_origin = nu;
      out.scores.push_back(std::move(s));
    } catch (const std::runtime_error& e) {
      out.warnings.push_back("clustering with m=" + std::to_string(cl.m) + " (nu=" + std::to_string(nu) +
                             ") skipped: " + e.what());
    }
  }
  if (out.scores.empty()) throw SolverError("every clustering failed to score");
  std::stable_sort(out.scores.begin(), out.scores.end(), [](const ModelScore& a, const ModelScore& b) {
    if (a.log_marginal != b.log_marginal) return a.log_marginal > b.log_marginal;
    if (a.m != b.m) return a.m < b.m;
    return a.nu_origin < b.nu_origin;
  });
  return out;
}

}  // namespace covclust
