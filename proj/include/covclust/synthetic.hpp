#pragma once

// Planted-cluster synthetic data: K covariate groups each tied to one class,
// Gaussian class-conditional samples with block covariance, and a data-driven
// similarity estimate (class-centered Ledoit-Wolf, negatives clipped).

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "covclust/clustering.hpp"
#include "covclust/core_model.hpp"
#include "covclust/errors.hpp"

namespace covclust {

enum class SimilarityMode { Agree, Contradict };

inline std::string_view to_string(SimilarityMode m) { return m == SimilarityMode::Agree ? "agree" : "contradict"; }

inline SimilarityMode parse_similarity_mode(std::string_view s) {
  if (s == "agree") return SimilarityMode::Agree;
  if (s == "contradict") return SimilarityMode::Contradict;
  throw InputError("unknown similarity mode '" + std::string(s) + "' (expected agree|contradict)");
}

struct GroundTruth {
  Matrix B;            // c x d
  Vector beta0;        // zeros
  Clustering truth;    // K contiguous groups
  int K = 0;
  Matrix S;            // d x d covariance used for sampling; filled by make_similarity
  SimilarityMode mode = SimilarityMode::Agree;
};

/// d covariates in K contiguous groups (sizes differ by at most one, larger
/// groups first). Group g (1-based) puts weight 0.5 g on class ((g-1) mod c)+1.
inline GroundTruth make_ground_truth(int d, int c = 4, int K = 10) {
  if (c < 2) throw InputError("need at least two classes");
  if (K < 1) throw InputError("need at least one cluster");
  if (d < K) throw InputError("d=" + std::to_string(d) + " is smaller than K=" + std::to_string(K));
  GroundTruth gt;
  gt.K = K;
  gt.B = Matrix::Zero(c, d);
  gt.beta0 = Vector::Zero(c);
  std::vector<int> labels(d);
  const int base = d / K;
  const int extra = d % K;
  int pos = 0;
  for (int g = 0; g < K; ++g) {
    const int size = base + (g < extra ? 1 : 0);
    for (int t = 0; t < size; ++t, ++pos) {
      labels[pos] = g;
      gt.B(g % c, pos) = 0.5 * (g + 1);
    }
  }
  gt.truth = Clustering::canonical(labels);
  return gt;
}

/// Block similarity: 0.9 within a block, 0 across, 1 on the diagonal. In
/// contradict mode the blocks are the true groups cyclically shifted by half a
/// group width, so each block straddles two groups with different classes.
inline Matrix make_similarity(const GroundTruth& truth, SimilarityMode mode) {
  const int d = truth.truth.d();
  const int shift = mode == SimilarityMode::Agree ? 0 : d / (2 * truth.K);
  std::vector<int> block(d);
  for (int i = 0; i < d; ++i) block[i] = truth.truth.assignment[((i - shift) % d + d) % d];
  Matrix S = Matrix::Identity(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j && block[i] == block[j]) S(i, j) = 0.9;
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success) throw NumericError("similarity matrix is not positive definite");
  return S;
}

inline GroundTruth make_ground_truth(int d, int c, int K, SimilarityMode mode) {
  GroundTruth gt = make_ground_truth(d, c, K);
  gt.mode = mode;
  gt.S = make_similarity(gt, mode);
  return gt;
}

/// n/c draws per class from N(B_{y,.}, S), class by class.
inline Dataset sample(const GroundTruth& truth, int n, std::uint64_t seed) {
  const int c = static_cast<int>(truth.B.rows());
  const int d = static_cast<int>(truth.B.cols());
  if (n < c || n % c != 0) throw InputError("n=" + std::to_string(n) + " must be a positive multiple of c=" + std::to_string(c));
  if (truth.S.rows() != d || truth.S.cols() != d) throw DimensionError("ground truth has no similarity matrix");
  Eigen::LLT<Matrix> llt(truth.S);
  if (llt.info() != Eigen::Success) throw NumericError("cannot factor the sampling covariance");
  const Matrix L = llt.matrixL();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset data;
  data.c = c;
  data.X.resize(n, d);
  data.y.resize(n);
  Vector xi(d);
  const int per_class = n / c;
  for (int y = 0; y < c; ++y) {
    for (int t = 0; t < per_class; ++t) {
      const int s = y * per_class + t;
      for (int k = 0; k < d; ++k) xi(k) = normal(rng);
      data.X.row(s) = (truth.B.row(y).transpose() + L * xi).transpose();
      data.y[s] = y;
    }
  }
  return data;
}

struct ShrunkCovariance {
  Matrix covariance;   // after shrinkage, before thresholding
  double shrinkage = 0.0;
};

/// Ledoit-Wolf shrinkage toward tr(S)/d * I for already-centered rows.
inline ShrunkCovariance ledoit_wolf(const Matrix& centered) {
  const Index n = centered.rows();
  const Index d = centered.cols();
  if (n < 1) throw InputError("Ledoit-Wolf needs at least one observation");
  const Matrix S = centered.transpose() * centered / double(n);
  const double mu = S.trace() / double(d);
  const Matrix target = mu * Matrix::Identity(d, d);
  const double delta2 = (S - target).squaredNorm() / double(d);
  double sum_r4 = 0.0;
  for (Index k = 0; k < n; ++k) sum_r4 += std::pow(centered.row(k).squaredNorm(), 2);
  // sum_k ||r_k r_k^T - S||_F^2 = sum_k ||r_k||^4 - n ||S||_F^2
  const double beta_bar2 = std::max(0.0, (sum_r4 - double(n) * S.squaredNorm()) / (double(n) * double(n) * double(d)));
  const double beta2 = std::min(beta_bar2, delta2);
  ShrunkCovariance out;
  out.shrinkage = delta2 > 0.0 ? beta2 / delta2 : 1.0;
  out.covariance = out.shrinkage * target + (1.0 - out.shrinkage) * S;
  return out;
}

struct SimilarityEstimate {
  Matrix S;            // thresholded shrunk covariance, diagonal kept
  double shrinkage = 0.0;
  SimilarityGraph graph() const { return SimilarityGraph::from_dense(S); }
};

inline SimilarityEstimate estimate_similarity_matrix(const Dataset& data) {
  data.validate();
  if (data.n() <= data.c) {
    throw InputError("n=" + std::to_string(data.n()) + " leaves no residual degrees of freedom with c=" +
                     std::to_string(data.c));
  }
  Matrix means = Matrix::Zero(data.c, data.d());
  std::vector<int> counts(data.c, 0);
  for (Index s = 0; s < data.n(); ++s) {
    means.row(data.y[s]) += data.X.row(s);
    ++counts[data.y[s]];
  }
  for (int y = 0; y < data.c; ++y)
    if (counts[y] > 0) means.row(y) /= counts[y];
  Matrix centered = data.X;
  for (Index s = 0; s < data.n(); ++s) centered.row(s) -= means.row(data.y[s]);
  const ShrunkCovariance lw = ledoit_wolf(centered);
  SimilarityEstimate est;
  est.shrinkage = lw.shrinkage;
  est.S = lw.covariance.cwiseMax(0.0);
  est.S = 0.5 * (est.S + est.S.transpose());
  return est;
}

inline SimilarityGraph estimate_similarity(const Dataset& data) { return estimate_similarity_matrix(data).graph(); }

}  // namespace covclust
