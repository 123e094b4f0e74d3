#pragma once

// Data model and the multinomial logistic likelihood with the fusion-penalized
// objective built on top of it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "covclust/errors.hpp"

namespace covclust {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kDefaultLambda = 0.1;

/// Classification sample set. Labels are stored 0-based; `from_one_based`
/// is the single conversion point from the external 1..c convention.
struct Dataset {
  Matrix X;               // n x d
  std::vector<int> y;     // length n, values in [0, c)
  int c = 2;

  Index n() const { return X.rows(); }
  Index d() const { return X.cols(); }

  static Dataset from_one_based(Matrix X, std::span<const int> labels, int c);

  /// Throws on any invariant violation. An empty sample set is accepted so the
  /// solver can be driven by its quadratic terms alone.
  void validate() const;
};

struct ModelParams {
  Matrix B;      // c x d, column i is the class-weight vector b_i of covariate i
  Vector beta0;  // c

  ModelParams() = default;
  ModelParams(Matrix b, Vector b0) : B(std::move(b)), beta0(std::move(b0)) {}

  static ModelParams zeros(Index c, Index d) { return {Matrix::Zero(c, d), Vector::Zero(c)}; }

  Index c() const { return B.rows(); }
  Index d() const { return B.cols(); }
  bool all_finite() const { return B.allFinite() && beta0.allFinite(); }
};

/// Symmetric nonnegative covariate similarities as sorted adjacency lists.
///
/// Every undirected edge {i, j} appears twice as a directed edge, once in the
/// list of i and once in the list of j. Directed edges are numbered densely in
/// (i, position-in-list) order so per-edge ADMM vectors can live in one matrix.
class SimilarityGraph {
 public:
  struct Neighbor {
    int id;
    double weight;
  };
  struct Edge {
    int i;           // i < j
    int j;
    double weight;
    Index ij;        // directed edge id of i -> j
    Index ji;        // directed edge id of j -> i
  };

  SimilarityGraph() = default;

  /// Edges from the strictly positive off-diagonal entries; the diagonal is ignored.
  static SimilarityGraph from_dense(const Matrix& S, double symmetry_tol = 1e-12);

  /// Edges from (i, j, weight) triples with 0-based ids. Each undirected pair may be
  /// listed once or in both orientations (with equal weights).
  static SimilarityGraph from_triples(int d, std::span<const std::tuple<int, int, double>> triples);

  int d() const { return static_cast<int>(adjacency_.size()); }
  Index edge_count() const { return static_cast<Index>(edges_.size()); }     // l
  Index directed_count() const { return 2 * edge_count(); }                  // 2l
  int degree(int i) const { return static_cast<int>(adjacency_[i].size()); }
  const std::vector<Neighbor>& neighbors(int i) const { return adjacency_[i]; }
  /// Directed id of the j-th neighbor of i.
  Index directed_id(int i, int j) const { return offsets_[i] + j; }
  Index offset(int i) const { return offsets_[i]; }
  /// Source covariate of a directed edge.
  int source(Index e) const { return source_[e]; }
  /// Undirected edges in ascending (i, j), i < j.
  const std::vector<Edge>& edges() const { return edges_; }
  double weight(int i, int j) const;

  Matrix to_dense() const;

 private:
  void finalize();

  std::vector<std::vector<Neighbor>> adjacency_;
  std::vector<Index> offsets_;
  std::vector<int> source_;
  std::vector<Edge> edges_;
};

/// Softmax class probabilities for a single sample.
Vector class_probs(const ModelParams& params, const Eigen::Ref<const Vector>& x);

/// -sum_s log f(y_s | x_s) + lambda * ||B||_F^2.
double penalized_nll(const ModelParams& params, const Dataset& data, double lambda);

/// Gradient of `penalized_nll`; the intercepts carry no penalty.
ModelParams penalized_nll_grad(const ModelParams& params, const Dataset& data, double lambda);

/// penalized_nll + nu * sum_{i<j} S_ij ||b_i - b_j||_2.
double full_objective(const ModelParams& params, const Dataset& data, const SimilarityGraph& graph,
                      double lambda, double nu);

// ---------------------------------------------------------------------------

namespace detail {

inline void check_shapes(const ModelParams& params, Index d, int c) {
  if (params.B.rows() != c || params.B.cols() != d || params.beta0.size() != c) {
    throw DimensionError("parameter shape (" + std::to_string(params.B.rows()) + "x" +
                         std::to_string(params.B.cols()) + ", " + std::to_string(params.beta0.size()) +
                         ") does not match c=" + std::to_string(c) + ", d=" + std::to_string(d));
  }
}

/// Negative log-likelihood of a multinomial logit over design X with labels y,
/// optionally accumulating its gradient. No penalty terms.
inline double logistic_nll(const Matrix& X, std::span<const int> y, const Matrix& B, const Vector& beta0,
                           Matrix* grad_B = nullptr, Vector* grad_beta0 = nullptr) {
  const Index n = X.rows();
  const Index c = B.rows();
  if (n == 0) {
    if (grad_B) grad_B->setZero(c, X.cols());
    if (grad_beta0) grad_beta0->setZero(c);
    return 0.0;
  }
  Matrix scores = X * B.transpose();  // n x c
  scores.rowwise() += beta0.transpose();
  double nll = 0.0;
  for (Index s = 0; s < n; ++s) {
    const double mx = scores.row(s).maxCoeff();
    auto row = scores.row(s);
    const double score_y = row(y[s]);
    row.array() = (row.array() - mx).exp();
    const double z = row.sum();
    nll += std::log(z) + mx - score_y;
    if (grad_B || grad_beta0) {
      row /= z;
      row(y[s]) -= 1.0;
    }
  }
  if (grad_B) grad_B->noalias() = scores.transpose() * X;
  if (grad_beta0) *grad_beta0 = scores.colwise().sum().transpose();
  return nll;
}

/// Fraction of rows whose argmax score (lowest class index on ties) equals y.
inline double argmax_accuracy(const Matrix& X, std::span<const int> y, const Matrix& B, const Vector& beta0) {
  const Index n = X.rows();
  if (n == 0) return 0.0;
  Matrix scores = X * B.transpose();
  scores.rowwise() += beta0.transpose();
  Index correct = 0;
  for (Index s = 0; s < n; ++s) {
    Index best = 0;
    for (Index k = 1; k < scores.cols(); ++k)
      if (scores(s, k) > scores(s, best)) best = k;
    if (best == y[s]) ++correct;
  }
  return double(correct) / double(n);
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline Dataset Dataset::from_one_based(Matrix X, std::span<const int> labels, int c) {
  if (static_cast<Index>(labels.size()) != X.rows()) {
    throw DimensionError("label count " + std::to_string(labels.size()) + " != sample count " +
                         std::to_string(X.rows()));
  }
  Dataset data;
  data.X = std::move(X);
  data.c = c;
  data.y.reserve(labels.size());
  for (int label : labels) {
    if (label < 1 || label > c) {
      throw InputError("label " + std::to_string(label) + " outside 1.." + std::to_string(c));
    }
    data.y.push_back(label - 1);
  }
  data.validate();
  return data;
}

inline void Dataset::validate() const {
  if (c < 2) throw InputError("need at least two classes, got c=" + std::to_string(c));
  if (X.cols() < 1) throw InputError("need at least one covariate");
  if (static_cast<Index>(y.size()) != X.rows()) throw DimensionError("label vector length differs from n");
  if (!X.allFinite()) throw DomainError("design matrix has non-finite entries");
  for (int label : y) {
    if (label < 0 || label >= c) throw InputError("label outside class range");
  }
}

inline SimilarityGraph SimilarityGraph::from_dense(const Matrix& S, double symmetry_tol) {
  if (S.rows() != S.cols()) throw DimensionError("similarity matrix must be square");
  if (!S.allFinite()) throw DomainError("similarity matrix has non-finite entries");
  const int d = static_cast<int>(S.rows());
  SimilarityGraph g;
  g.adjacency_.resize(d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (i == j) continue;
      if (std::abs(S(i, j) - S(j, i)) > symmetry_tol * std::max(1.0, std::abs(S(i, j)))) {
        throw InputError("similarity matrix is not symmetric at (" + std::to_string(i + 1) + ", " +
                         std::to_string(j + 1) + ")");
      }
      // Upper triangle is authoritative so both directions carry identical weights.
      const double w = i < j ? S(i, j) : S(j, i);
      if (w > 0.0) g.adjacency_[i].push_back({j, w});
    }
  }
  g.finalize();
  return g;
}

inline SimilarityGraph SimilarityGraph::from_triples(int d, std::span<const std::tuple<int, int, double>> triples) {
  if (d < 1) throw InputError("graph needs at least one covariate");
  Matrix S = Matrix::Zero(d, d);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> seen =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(d, d, false);
  for (const auto& [i, j, w] : triples) {
    if (i < 0 || i >= d || j < 0 || j >= d) {
      throw InputError("edge endpoint out of range: (" + std::to_string(i + 1) + ", " + std::to_string(j + 1) + ")");
    }
    if (i == j) throw InputError("self-loop on covariate " + std::to_string(i + 1));
    if (!std::isfinite(w) || w < 0.0) throw DomainError("edge weight must be finite and nonnegative");
    const int a = std::min(i, j);
    const int b = std::max(i, j);
    if (seen(a, b) && S(a, b) != w) {
      throw InputError("conflicting weights for edge (" + std::to_string(a + 1) + ", " + std::to_string(b + 1) + ")");
    }
    seen(a, b) = true;
    S(a, b) = w;
    S(b, a) = w;
  }
  return from_dense(S, 0.0);
}

inline void SimilarityGraph::finalize() {
  const int d = static_cast<int>(adjacency_.size());
  offsets_.assign(d + 1, 0);
  for (int i = 0; i < d; ++i) {
    std::sort(adjacency_[i].begin(), adjacency_[i].end(),
              [](const Neighbor& a, const Neighbor& b) { return a.id < b.id; });
    offsets_[i + 1] = offsets_[i] + static_cast<Index>(adjacency_[i].size());
  }
  source_.assign(static_cast<std::size_t>(offsets_[d]), 0);
  edges_.clear();
  for (int i = 0; i < d; ++i) {
    for (int jj = 0; jj < degree(i); ++jj) {
      source_[static_cast<std::size_t>(offsets_[i] + jj)] = i;
      const auto [j, w] = adjacency_[i][jj];
      if (j <= i) continue;
      const auto& nj = adjacency_[j];
      const auto it = std::lower_bound(nj.begin(), nj.end(), i,
                                       [](const Neighbor& nb, int id) { return nb.id < id; });
      if (it == nj.end() || it->id != i) throw ConsistencyError("adjacency is not symmetric");
      edges_.push_back({i, j, w, offsets_[i] + jj, offsets_[j] + (it - nj.begin())});
    }
  }
}

inline double SimilarityGraph::weight(int i, int j) const {
  const auto& ni = adjacency_.at(i);
  const auto it = std::lower_bound(ni.begin(), ni.end(), j, [](const Neighbor& nb, int id) { return nb.id < id; });
  return (it != ni.end() && it->id == j) ? it->weight : 0.0;
}

inline Matrix SimilarityGraph::to_dense() const {
  Matrix S = Matrix::Zero(d(), d());
  for (const auto& e : edges_) {
    S(e.i, e.j) = e.weight;
    S(e.j, e.i) = e.weight;
  }
  return S;
}

inline Vector class_probs(const ModelParams& params, const Eigen::Ref<const Vector>& x) {
  if (params.B.cols() != x.size() || params.beta0.size() != params.B.rows()) {
    throw DimensionError("class_probs: B is " + std::to_string(params.B.rows()) + "x" +
                         std::to_string(params.B.cols()) + " but x has " + std::to_string(x.size()) + " entries");
  }
  if (!params.all_finite() || !x.allFinite()) throw DomainError("class_probs: non-finite input");
  Vector score = params.B * x + params.beta0;
  score.array() = (score.array() - score.maxCoeff()).exp();
  return score / score.sum();
}

inline double penalized_nll(const ModelParams& params, const Dataset& data, double lambda) {
  detail::check_shapes(params, data.d(), data.c);
  if (!(lambda >= 0.0)) throw DomainError("lambda must be nonnegative");
  if (!params.all_finite()) throw DomainError("penalized_nll: non-finite parameters");
  return detail::logistic_nll(data.X, data.y, params.B, params.beta0) + lambda * params.B.squaredNorm();
}

inline ModelParams penalized_nll_grad(const ModelParams& params, const Dataset& data, double lambda) {
  detail::check_shapes(params, data.d(), data.c);
  if (!(lambda >= 0.0)) throw DomainError("lambda must be nonnegative");
  if (!params.all_finite()) throw DomainError("penalized_nll_grad: non-finite parameters");
  ModelParams grad;
  detail::logistic_nll(data.X, data.y, params.B, params.beta0, &grad.B, &grad.beta0);
  grad.B += 2.0 * lambda * params.B;
  return grad;
}

inline double full_objective(const ModelParams& params, const Dataset& data, const SimilarityGraph& graph,
                             double lambda, double nu) {
  if (graph.d() != data.d()) throw DimensionError("graph covariate count differs from dataset");
  if (!(nu >= 0.0)) throw DomainError("nu must be nonnegative");
  double fusion = 0.0;
  for (const auto& e : graph.edges()) fusion += e.weight * (params.B.col(e.i) - params.B.col(e.j)).norm();
  return penalized_nll(params, data, lambda) + nu * fusion;
}

}  // namespace covclust
