#pragma once

// Covariate partitions read off a solved ADMM state: an edge joins i and j
// when their two auxiliary copies are bit-identical, and the clusters are the
// connected components of those edges.

#include <algorithm>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "covclust/admm.hpp"
#include "covclust/core_model.hpp"
#include "covclust/errors.hpp"

namespace covclust {

/// Partition of d covariates into m clusters, stored 0-based and canonically
/// labeled: cluster ids ascend with the smallest member index.
struct Clustering {
  std::vector<int> assignment;
  int m = 0;

  int d() const { return static_cast<int>(assignment.size()); }

  /// Relabels an arbitrary assignment into canonical form.
  static Clustering canonical(std::span<const int> labels);
  static Clustering singletons(int d);
  static Clustering all_in_one(int d);

  std::vector<std::vector<int>> members() const;
  std::vector<int> one_based() const;

  void validate() const;

  friend bool operator==(const Clustering& a, const Clustering& b) { return a.assignment == b.assignment; }
};

/// Undirected edges {i, j} (i < j, 0-based) whose copies coincide bitwise.
std::vector<std::pair<int, int>> fusion_edges(const AdmmState& state, const SimilarityGraph& graph);

Clustering connected_components(int d, std::span<const std::pair<int, int>> edges);

inline Clustering extract_clustering(const AdmmState& state, const SimilarityGraph& graph) {
  return connected_components(graph.d(), fusion_edges(state, graph));
}

// ---------------------------------------------------------------------------

inline Clustering Clustering::canonical(std::span<const int> labels) {
  Clustering out;
  out.assignment.resize(labels.size());
  std::vector<std::pair<int, int>> seen;  // (raw label, canonical id)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = std::find_if(seen.begin(), seen.end(), [&](const auto& p) { return p.first == labels[i]; });
    if (it == seen.end()) {
      seen.emplace_back(labels[i], out.m++);
      out.assignment[i] = out.m - 1;
    } else {
      out.assignment[i] = it->second;
    }
  }
  return out;
}

inline Clustering Clustering::singletons(int d) {
  Clustering out;
  out.assignment.resize(d);
  std::iota(out.assignment.begin(), out.assignment.end(), 0);
  out.m = d;
  return out;
}

inline Clustering Clustering::all_in_one(int d) {
  Clustering out;
  out.assignment.assign(d, 0);
  out.m = d > 0 ? 1 : 0;
  return out;
}

inline std::vector<std::vector<int>> Clustering::members() const {
  std::vector<std::vector<int>> out(m);
  for (int i = 0; i < d(); ++i) out[assignment[i]].push_back(i);
  return out;
}

inline std::vector<int> Clustering::one_based() const {
  std::vector<int> out(assignment);
  for (int& a : out) ++a;
  return out;
}

inline void Clustering::validate() const {
  int next = 0;
  for (int a : assignment) {
    if (a < 0 || a > next) throw InputError("clustering is not canonically labeled");
    if (a == next) ++next;
  }
  if (next != m) throw InputError("clustering cluster count does not match its assignment");
}

inline std::vector<std::pair<int, int>> fusion_edges(const AdmmState& state, const SimilarityGraph& graph) {
  state.check_against(graph);
  const Index c = state.z.rows();
  std::vector<std::pair<int, int>> out;
  for (const auto& e : graph.edges()) {
    const double* a = state.z.col(e.ij).data();
    const double* b = state.z.col(e.ji).data();
    if (std::memcmp(a, b, static_cast<std::size_t>(c) * sizeof(double)) == 0) out.emplace_back(e.i, e.j);
  }
  return out;
}

inline Clustering connected_components(int d, std::span<const std::pair<int, int>> edges) {
  std::vector<int> parent(d);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const auto& [a, b] : edges) {
    if (a < 0 || a >= d || b < 0 || b >= d) {
      throw InputError("edge (" + std::to_string(a + 1) + ", " + std::to_string(b + 1) + ") outside 1.." +
                       std::to_string(d));
    }
    const int ra = find(a);
    const int rb = find(b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> roots(d);
  for (int i = 0; i < d; ++i) roots[i] = find(i);
  return Clustering::canonical(roots);
}

}  // namespace covclust
