#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <cmath>

#include "covclust/synthetic.hpp"
#include "test_util.hpp"

using namespace covclust;
using namespace covclust::testing;

TEST(GroundTruth, PlantedCoefficientRule) {
  const GroundTruth gt = make_ground_truth(20, 4, 10);
  EXPECT_EQ(gt.truth.m, 10);
  EXPECT_EQ(gt.beta0, Vector::Zero(4));
  // Cluster 3 (1-based) holds covariates 5 and 6 and puts 1.5 on class 3.
  for (int i : {4, 5}) {
    EXPECT_EQ(gt.truth.assignment[i], 2);
    Vector want = Vector::Zero(4);
    want(2) = 1.5;
    EXPECT_EQ(gt.B.col(i), want);
  }
  // Cluster 5 wraps round to class 1.
  EXPECT_DOUBLE_EQ(gt.B(0, 8), 2.5);
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ((gt.B.col(i).array() != 0.0).count(), 1);
    for (int j = 0; j < 20; ++j)
      if (gt.truth.assignment[i] == gt.truth.assignment[j]) {
        EXPECT_EQ(gt.B.col(i), gt.B.col(j));
      }
  }
}

TEST(GroundTruth, SingleClusterAndErrors) {
  const GroundTruth one = make_ground_truth(6, 3, 1);
  for (int i = 1; i < 6; ++i) EXPECT_EQ(one.B.col(i), one.B.col(0));
  EXPECT_THROW(make_ground_truth(5, 4, 10), InputError);
  const GroundTruth uneven = make_ground_truth(7, 2, 3);
  EXPECT_EQ(uneven.truth.one_based(), (std::vector<int>{1, 1, 1, 2, 2, 3, 3}));
}

TEST(Similarity, AgreeBlocks) {
  const GroundTruth gt = make_ground_truth(8, 2, 2);
  const Matrix S = make_similarity(gt, SimilarityMode::Agree);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      const double want = i == j ? 1.0 : (i / 4 == j / 4 ? 0.9 : 0.0);
      EXPECT_EQ(S(i, j), want) << i << "," << j;
    }
}

TEST(Similarity, ContradictHalfShift) {
  const GroundTruth gt = make_ground_truth(8, 2, 2);
  const Matrix S = make_similarity(gt, SimilarityMode::Contradict);
  auto block = [](int i) { return i >= 2 && i <= 5 ? 0 : 1; };  // {3..6} and {7,8,1,2}
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      const double want = i == j ? 1.0 : (block(i) == block(j) ? 0.9 : 0.0);
      EXPECT_EQ(S(i, j), want) << i << "," << j;
    }
}

TEST(Similarity, BothModesPositiveDefinite) {
  for (int d : {8, 20, 40}) {
    const GroundTruth gt = make_ground_truth(d, 4, d == 8 ? 2 : 10);
    for (auto mode : {SimilarityMode::Agree, SimilarityMode::Contradict}) {
      const Matrix S = make_similarity(gt, mode);
      EXPECT_EQ(S, S.transpose());
      EXPECT_EQ(Eigen::LLT<Matrix>(S).info(), Eigen::Success);
    }
  }
  EXPECT_EQ(parse_similarity_mode("agree"), SimilarityMode::Agree);
  EXPECT_THROW(parse_similarity_mode("sideways"), InputError);
}

TEST(Sample, ClassBalanceAndDeterminism) {
  const GroundTruth gt = make_ground_truth(12, 4, 3, SimilarityMode::Agree);
  const Dataset a = sample(gt, 40, 7);
  const Dataset b = sample(gt, 40, 7);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.y, b.y);
  std::vector<int> counts(4, 0);
  for (int y : a.y) ++counts[y];
  for (int v : counts) EXPECT_EQ(v, 10);
  EXPECT_NE(sample(gt, 40, 8).X, a.X);
  EXPECT_THROW(sample(gt, 41, 7), InputError);
}

TEST(Sample, MeansConvergeWithIdentityCovariance) {
  GroundTruth gt = make_ground_truth(6, 3, 3);
  gt.S = Matrix::Identity(6, 6);
  const int n = 9999;
  const Dataset data = sample(gt, n, 3);
  const double per_class = n / 3.0;
  for (int y = 0; y < 3; ++y) {
    Vector mean = Vector::Zero(6);
    for (Index s = 0; s < data.n(); ++s)
      if (data.y[s] == y) mean += data.X.row(s).transpose();
    mean /= per_class;
    const double se = 1.0 / std::sqrt(per_class);
    EXPECT_LT((mean - gt.B.row(y).transpose()).cwiseAbs().maxCoeff(), 5 * se);
  }
}

TEST(Sample, EmpiricalCovarianceMatches) {
  const GroundTruth gt = make_ground_truth(8, 2, 2, SimilarityMode::Contradict);
  const int n = 100000;
  const Dataset data = sample(gt, n, 5);
  Matrix centered = data.X;
  for (int y = 0; y < 2; ++y)
    for (Index s = 0; s < data.n(); ++s)
      if (data.y[s] == y) centered.row(s) -= gt.B.row(y);
  const Matrix cov = centered.transpose() * centered / double(n);
  EXPECT_LT((cov - gt.S).cwiseAbs().maxCoeff(), 0.05);
}

TEST(LedoitWolf, IntensityInUnitIntervalAndWellDefined) {
  std::mt19937_64 rng(9);
  const Matrix X = random_matrix(30, 10, rng);
  const ShrunkCovariance a = ledoit_wolf(X.rowwise() - X.colwise().mean());
  EXPECT_GE(a.shrinkage, 0.0);
  EXPECT_LE(a.shrinkage, 1.0);
  EXPECT_EQ(Eigen::LLT<Matrix>(a.covariance).info(), Eigen::Success);

  Matrix rep(20, 5);
  for (int s = 0; s < 20; ++s) rep.row(s) << 1, 2, 3, 4, 5;
  Matrix cen = rep.rowwise() - rep.colwise().mean();
  cen.row(0).array() += 1e-3;
  const ShrunkCovariance b = ledoit_wolf(cen);
  EXPECT_TRUE(b.covariance.allFinite());
  EXPECT_GE(b.shrinkage, 0.0);
  EXPECT_LE(b.shrinkage, 1.0);
}

TEST(LedoitWolf, MatchesClosedFormOracle) {
  // Direct transcription of the estimator: S = X^T X / n, mu = tr(S) / d,
  // delta^2 = ||S - mu I||^2 / d, beta^2 = sum_k ||x_k x_k^T - S||^2 / (n^2 d).
  std::mt19937_64 rng(10);
  const Index n = 25, d = 6;
  Matrix X = random_matrix(n, d, rng);
  X = X.rowwise() - X.colwise().mean();
  const Matrix S = X.transpose() * X / double(n);
  const double mu = S.trace() / d;
  const Matrix F = mu * Matrix::Identity(d, d);
  const double delta2 = (S - F).squaredNorm() / d;
  double beta2 = 0.0;
  for (Index k = 0; k < n; ++k) {
    const Vector x = X.row(k).transpose();
    beta2 += (x * x.transpose() - S).squaredNorm();
  }
  beta2 /= double(n) * double(n) * d;
  const double shrink = std::min(beta2, delta2) / delta2;
  const Matrix want = shrink * F + (1 - shrink) * S;
  const ShrunkCovariance got = ledoit_wolf(X);
  EXPECT_NEAR(got.shrinkage, shrink, 1e-12);
  EXPECT_LT((got.covariance - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EstimateSimilarity, SeparatesTrueBlocks) {
  const GroundTruth gt = make_ground_truth(40, 4, 10, SimilarityMode::Agree);
  const Dataset data = sample(gt, 4000, 11);
  const SimilarityEstimate est = estimate_similarity_matrix(data);
  double within = 0.0, cross = 0.0;
  int nw = 0, nc = 0;
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j) {
      if (i == j) continue;
      EXPECT_GE(est.S(i, j), 0.0);
      EXPECT_EQ(est.S(i, j), est.S(j, i));
      if (gt.truth.assignment[i] == gt.truth.assignment[j]) {
        within += est.S(i, j);
        ++nw;
      } else {
        cross += est.S(i, j);
        ++nc;
      }
    }
  EXPECT_GT(within / nw, cross / nc);
  const SimilarityGraph g = est.graph();
  const Matrix dense = g.to_dense();
  EXPECT_EQ(dense.diagonal(), Vector::Zero(40));
  EXPECT_GE(est.shrinkage, 0.0);
  EXPECT_LE(est.shrinkage, 1.0);
}

TEST(EstimateSimilarity, NeedsResidualDegreesOfFreedom) {
  const GroundTruth gt = make_ground_truth(6, 2, 2, SimilarityMode::Agree);
  const Dataset data = sample(gt, 2, 1);
  EXPECT_ANY_THROW(estimate_similarity(data));
}
