#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/SVD>

#include "covclust/core_model.hpp"

namespace covclust::testing {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) M(i, j) = nd(rng);
  return M;
}

inline Vector random_vector(Index n, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

/// Gaussian design with uniformly drawn labels; every class appears at least once when n >= c.
inline Dataset random_dataset(Index n, Index d, int c, std::mt19937_64& rng) {
  Dataset data;
  data.X = random_matrix(n, d, rng);
  data.c = c;
  data.y.resize(n);
  std::uniform_int_distribution<int> cls(0, c - 1);
  for (Index s = 0; s < n; ++s) data.y[s] = s < c ? static_cast<int>(s) : cls(rng);
  return data;
}

inline ModelParams random_params(Index c, Index d, std::mt19937_64& rng, double scale = 0.5) {
  return {random_matrix(c, d, rng, scale), random_vector(c, rng, scale)};
}

/// Random graph over d nodes where each pair is an edge with probability p.
inline SimilarityGraph random_graph(int d, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix S = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      if (u(rng) < p) S(i, j) = S(j, i) = 0.1 + u(rng);
  return SimilarityGraph::from_dense(S);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

inline double rel_frob(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(1e-300, std::max(a.norm(), b.norm()));
}

}  // namespace covclust::testing

namespace covclust::testing {

/// Minimizes penalized_nll by fixed-step gradient descent; slow but
/// independent of the library's quasi-Newton code.
inline ModelParams gradient_descent_fit(const Dataset& data, double lambda, int max_iter = 200000,
                                        double tol = 1e-10) {
  Matrix Xa(data.n(), data.d() + 1);
  Xa << data.X, Vector::Ones(data.n());
  const double smax = Eigen::JacobiSVD<Matrix>(Xa).singularValues()(0);
  const double step = 1.0 / (0.5 * smax * smax + 2.0 * lambda);
  ModelParams p = ModelParams::zeros(data.c, data.d());
  for (int it = 0; it < max_iter; ++it) {
    const ModelParams g = penalized_nll_grad(p, data, lambda);
    if (std::max(g.B.cwiseAbs().maxCoeff(), g.beta0.cwiseAbs().maxCoeff()) < tol) break;
    p.B -= step * g.B;
    p.beta0 -= step * g.beta0;
  }
  return p;
}

}  // namespace covclust::testing

namespace covclust::testing {

struct EdgeSubproblem {
  Vector a, b;
  double nu_s = 0.0;  // nu * S_ij
  double rho = 1.0;

  double value(const Vector& z1, const Vector& z2) const {
    return nu_s * (z1 - z2).norm() + 0.5 * rho * (z1 - a).squaredNorm() + 0.5 * rho * (z2 - b).squaredNorm();
  }
};

/// Minimizes the two-vector edge subproblem by projected gradient ascent on
/// its dual: for a dual vector w with ||w|| <= nu_s the primal minimizers are
/// z1 = a - w / rho and z2 = b + w / rho.
inline std::pair<Vector, Vector> edge_prox_oracle(const EdgeSubproblem& p, int iters = 2000) {
  Vector w = Vector::Zero(p.a.size());
  const double step = p.rho / 8.0;
  for (int it = 0; it < iters; ++it) {
    const Vector z1 = p.a - w / p.rho;
    const Vector z2 = p.b + w / p.rho;
    w += step * (z1 - z2);
    const double nw = w.norm();
    if (nw > p.nu_s) w *= p.nu_s / nw;
  }
  return {p.a - w / p.rho, p.b + w / p.rho};
}

}  // namespace covclust::testing
