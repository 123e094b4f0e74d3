#pragma once

// Evaluation metrics and baselines: adjusted mutual information between
// partitions, argmax accuracy, k-means++ clustering of covariates from their
// similarity rows, and the one-standard-deviation cross-validation selector.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "covclust/clustering.hpp"
#include "covclust/core_model.hpp"
#include "covclust/errors.hpp"
#include "covclust/model_select.hpp"
#include "covclust/path.hpp"

namespace covclust {

enum class AmiNormalizer { Max, Min, Arithmetic, Geometric };

inline AmiNormalizer parse_ami_normalizer(std::string_view s) {
  if (s == "max") return AmiNormalizer::Max;
  if (s == "min") return AmiNormalizer::Min;
  if (s == "arithmetic") return AmiNormalizer::Arithmetic;
  if (s == "geometric") return AmiNormalizer::Geometric;
  throw InputError("unknown AMI normalizer '" + std::string(s) + "'");
}

struct EvalReport {
  double anmi = 0.0;
  double heldout_accuracy = 0.0;
  int m = 0;
  std::string method;
  std::uint64_t seed = 0;
};

namespace detail {

inline double entropy(const std::vector<double>& counts, double N) {
  double h = 0.0;
  for (double a : counts)
    if (a > 0) h -= (a / N) * std::log(a / N);
  return h;
}

/// Expected mutual information under the hypergeometric permutation model.
inline double expected_mutual_information(const std::vector<double>& a, const std::vector<double>& b, double N) {
  const double lgN = std::lgamma(N + 1.0);
  double emi = 0.0;
  for (double ai : a) {
    for (double bj : b) {
      const double lo = std::max(1.0, ai + bj - N);
      const double hi = std::min(ai, bj);
      const double fixed = std::lgamma(ai + 1) + std::lgamma(bj + 1) + std::lgamma(N - ai + 1) +
                           std::lgamma(N - bj + 1) - lgN;
      for (double nij = lo; nij <= hi; nij += 1.0) {
        const double log_p = fixed - std::lgamma(nij + 1) - std::lgamma(ai - nij + 1) - std::lgamma(bj - nij + 1) -
                             std::lgamma(N - ai - bj + nij + 1);
        emi += (nij / N) * std::log(N * nij / (ai * bj)) * std::exp(log_p);
      }
    }
  }
  return emi;
}

}  // namespace detail

/// Adjusted-for-chance mutual information, (MI - E[MI]) / (norm(H_a, H_b) - E[MI]).
/// Degenerate cases (vanishing denominator, e.g. both partitions single-cluster)
/// give 1 for equal partitions and 0 otherwise.
inline double anmi(const Clustering& a, const Clustering& b, AmiNormalizer normalizer = AmiNormalizer::Max) {
  if (a.d() != b.d()) throw InputError("ANMI needs partitions of the same covariate set");
  const int d = a.d();
  if (d == 0) throw InputError("ANMI of empty partitions");
  const double N = d;
  std::vector<double> ca(a.m, 0.0), cb(b.m, 0.0);
  std::map<std::pair<int, int>, double> joint;
  for (int i = 0; i < d; ++i) {
    ca[a.assignment[i]] += 1;
    cb[b.assignment[i]] += 1;
    joint[{a.assignment[i], b.assignment[i]}] += 1;
  }
  double mi = 0.0;
  for (const auto& [key, nij] : joint) mi += (nij / N) * std::log(N * nij / (ca[key.first] * cb[key.second]));
  const double ha = detail::entropy(ca, N);
  const double hb = detail::entropy(cb, N);
  double norm = 0.0;
  switch (normalizer) {
    case AmiNormalizer::Max: norm = std::max(ha, hb); break;
    case AmiNormalizer::Min: norm = std::min(ha, hb); break;
    case AmiNormalizer::Arithmetic: norm = 0.5 * (ha + hb); break;
    case AmiNormalizer::Geometric: norm = std::sqrt(ha * hb); break;
  }
  const double emi = detail::expected_mutual_information(ca, cb, N);
  const double denom = norm - emi;
  if (std::abs(denom) < 1e-12) return a == b ? 1.0 : 0.0;
  return (mi - emi) / denom;
}

inline double accuracy(const ModelParams& params, const Dataset& data) {
  detail::check_shapes(params, data.d(), data.c);
  return detail::argmax_accuracy(data.X, data.y, params.B, params.beta0);
}

// ---------------------------------------------------------------------------
// k-means++ baseline

enum class KMeansFeatures { SimilarityRows, SpectralEmbedding };

inline KMeansFeatures parse_kmeans_features(std::string_view s) {
  if (s == "rows") return KMeansFeatures::SimilarityRows;
  if (s == "spectral") return KMeansFeatures::SpectralEmbedding;
  throw InputError("unknown k-means feature representation '" + std::string(s) + "' (expected rows|spectral)");
}

inline std::string_view to_string(KMeansFeatures f) {
  return f == KMeansFeatures::SimilarityRows ? "rows" : "spectral";
}

struct KMeansResult {
  Clustering clustering;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // of the winning restart, one entry per Lloyd pass
};

/// Lloyd's algorithm from k-means++ seeds on the rows of `points`.
inline KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int restarts = 10, int max_iter = 300) {
  const int d = static_cast<int>(points.rows());
  if (k < 1 || k > d) throw InputError("k=" + std::to_string(k) + " must lie in 1.." + std::to_string(d));
  if (restarts < 1) throw InputError("need at least one restart");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);

    // k-means++ seeding
    Matrix centers(k, points.cols());
    std::vector<double> dist2(d, std::numeric_limits<double>::infinity());
    std::vector<char> chosen(d, 0);
    int first = std::uniform_int_distribution<int>(0, d - 1)(rng);
    centers.row(0) = points.row(first);
    chosen[first] = 1;
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int i = 0; i < d; ++i) {
        dist2[i] = std::min(dist2[i], (points.row(i) - centers.row(c - 1)).squaredNorm());
        total += dist2[i];
      }
      int pick = -1;
      if (total > 0.0) {
        std::discrete_distribution<int> disc(dist2.begin(), dist2.end());
        pick = disc(rng);
      } else {
        std::vector<int> remaining;
        for (int i = 0; i < d; ++i)
          if (!chosen[i]) remaining.push_back(i);
        pick = remaining[std::uniform_int_distribution<std::size_t>(0, remaining.size() - 1)(rng)];
      }
      chosen[pick] = 1;
      centers.row(c) = points.row(pick);
    }

    std::vector<int> assign(d, -1);
    std::vector<double> history;
    double inertia = 0.0;
    for (int it = 0; it < max_iter; ++it) {
      bool changed = false;
      inertia = 0.0;
      for (int i = 0; i < d; ++i) {
        int arg = 0;
        double bestd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double dd = (points.row(i) - centers.row(c)).squaredNorm();
          if (dd < bestd) bestd = dd, arg = c;
        }
        if (assign[i] != arg) changed = true;
        assign[i] = arg;
        inertia += bestd;
      }
      history.push_back(inertia);
      if (!changed && it > 0) break;
      Matrix sums = Matrix::Zero(k, points.cols());
      std::vector<int> counts(k, 0);
      for (int i = 0; i < d; ++i) {
        sums.row(assign[i]) += points.row(i);
        ++counts[assign[i]];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[c] > 0) {
          centers.row(c) = sums.row(c) / counts[c];
        } else {
          // Re-seed an empty cluster at the point farthest from its center.
          int far = 0;
          double fd = -1.0;
          for (int i = 0; i < d; ++i) {
            const double dd = (points.row(i) - centers.row(assign[i])).squaredNorm();
            if (dd > fd) fd = dd, far = i;
          }
          centers.row(c) = points.row(far);
        }
      }
    }
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.clustering = Clustering::canonical(assign);
      best.inertia_history = std::move(history);
    }
  }
  return best;
}

/// Normalized spectral embedding (top-k eigenvectors of D^-1/2 S D^-1/2, rows unit-normalized).
inline Matrix spectral_embedding(const Matrix& S, int k) {
  const Index d = S.rows();
  Vector deg = S.rowwise().sum();
  Vector inv_sqrt = deg.unaryExpr([](double v) { return v > 0 ? 1.0 / std::sqrt(v) : 0.0; });
  const Matrix A = inv_sqrt.asDiagonal() * S * inv_sqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  Matrix emb = es.eigenvectors().rightCols(k);  // eigenvalues ascend
  for (Index i = 0; i < d; ++i) {
    const double nrm = emb.row(i).norm();
    if (nrm > 0) emb.row(i) /= nrm;
  }
  return emb;
}

/// k-means over covariates, each represented by its similarity row (or spectral embedding).
inline KMeansResult kmeans_similarity_detailed(const Matrix& S, int k, std::uint64_t seed, int restarts = 10,
                                               KMeansFeatures features = KMeansFeatures::SimilarityRows) {
  if (S.rows() != S.cols()) throw DimensionError("similarity matrix must be square");
  if (k < 1 || k > S.rows()) throw InputError("k=" + std::to_string(k) + " must lie in 1.." + std::to_string(S.rows()));
  const Matrix points = features == KMeansFeatures::SimilarityRows ? S : spectral_embedding(S, k);
  return kmeans(points, k, seed, restarts);
}

inline Clustering kmeans_similarity(const Matrix& S, int k, std::uint64_t seed, int restarts = 10,
                                    KMeansFeatures features = KMeansFeatures::SimilarityRows) {
  return kmeans_similarity_detailed(S, k, seed, restarts, features).clustering;
}

struct BaselineSelection {
  std::vector<ModelScore> scored;  // one per k, in k order (failed fits dropped)
  std::size_t best = 0;
};

/// k-means for each k in `ks`, each clustering scored by the Laplace marginal
/// likelihood; the best score wins (ties to smaller m).
inline BaselineSelection kmeans_baseline_select(const Dataset& data, const Matrix& S, const std::vector<int>& ks,
                                                double sigma, std::uint64_t seed, int restarts = 10,
                                                KMeansFeatures features = KMeansFeatures::SimilarityRows,
                                                const ScoreOptions& opt = {}) {
  BaselineSelection out;
  for (int k : ks) {
    const Clustering cl = kmeans_similarity(S, k, seed, restarts, features);
    try {
      ModelScore s = log_marginal(data, cl, sigma, opt);
      s.nu_origin = k;
      out.scored.push_back(std::move(s));
    } catch (const std::runtime_error&) {
    }
  }
  if (out.scored.empty()) throw SolverError("no k-means clustering could be scored");
  for (std::size_t i = 1; i < out.scored.size(); ++i) {
    const auto& s = out.scored[i];
    const auto& b = out.scored[out.best];
    if (s.log_marginal > b.log_marginal || (s.log_marginal == b.log_marginal && s.m < b.m)) out.best = i;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation selector

struct CvChoice {
  std::size_t record = 0;
  double mean = 0.0;
  double sd = 0.0;
  double best_mean = 0.0;
  double best_sd = 0.0;
};

/// Among distinct clusterings on the path, the smallest-m one whose mean
/// held-out log-likelihood is within one fold standard deviation of the best.
inline CvChoice cv_select(const std::vector<PathRecord>& records, const Dataset& data, double sigma, int folds = 5,
                          const MapOptions& opt = {}) {
  std::vector<std::size_t> candidates;
  std::map<std::vector<int>, std::size_t> seen;
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (records[r].failed) continue;
    if (seen.emplace(records[r].clustering.assignment, r).second) candidates.push_back(r);
  }
  if (candidates.empty()) throw InputError("cv_select needs at least one usable record");
  if (candidates.size() == 1) return {candidates.front(), 0.0, 0.0, 0.0, 0.0};

  std::vector<double> mean(candidates.size()), sd(candidates.size());
  for (std::size_t u = 0; u < candidates.size(); ++u) {
    const ReducedDataset reduced = project_dataset(data, records[candidates[u]].clustering);
    const auto ll = cv_heldout_loglik(reduced.data, sigma, folds, opt);
    double mu = 0.0;
    for (double v : ll) mu += v;
    mu /= double(ll.size());
    double var = 0.0;
    for (double v : ll) var += (v - mu) * (v - mu);
    var /= double(ll.size() > 1 ? ll.size() - 1 : 1);
    mean[u] = mu;
    sd[u] = std::sqrt(var);
  }
  std::size_t best = 0;
  for (std::size_t u = 1; u < candidates.size(); ++u)
    if (mean[u] > mean[best]) best = u;
  std::size_t pick = best;
  for (std::size_t u = 0; u < candidates.size(); ++u) {
    if (mean[u] < mean[best] - sd[best]) continue;
    const int mu_m = records[candidates[u]].clustering.m;
    const int mp = records[candidates[pick]].clustering.m;
    if (mu_m < mp || (mu_m == mp && mean[u] > mean[pick])) pick = u;
  }
  return {candidates[pick], mean[pick], sd[pick], mean[best], sd[best]};
}

}  // namespace covclust
