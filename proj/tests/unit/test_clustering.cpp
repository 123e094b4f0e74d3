#include <gtest/gtest.h>

#include <queue>
#include <random>

#include "covclust/admm.hpp"
#include "covclust/clustering.hpp"
#include "test_util.hpp"

using namespace covclust;
using namespace covclust::testing;

namespace {

// Components by breadth-first search, labeled in order of smallest member.
std::vector<int> bfs_components(int d, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> adj(d);
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<int> label(d, -1);
  int next = 0;
  for (int s = 0; s < d; ++s) {
    if (label[s] >= 0) continue;
    std::queue<int> q;
    q.push(s);
    label[s] = next;
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      for (int w : adj[v])
        if (label[w] < 0) {
          label[w] = next;
          q.push(w);
        }
    }
    ++next;
  }
  return label;
}

}  // namespace

TEST(ConnectedComponents, ChainPlusSingleton) {
  const std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}};
  const Clustering cl = connected_components(4, edges);
  EXPECT_EQ(cl.m, 2);
  EXPECT_EQ(cl.one_based(), (std::vector<int>{1, 1, 1, 2}));
}

TEST(ConnectedComponents, NoEdgesGivesIdentity) {
  const Clustering cl = connected_components(5, {});
  EXPECT_EQ(cl.m, 5);
  EXPECT_EQ(cl, Clustering::singletons(5));
}

TEST(ConnectedComponents, OutOfRangeEndpoint) {
  const std::vector<std::pair<int, int>> edges{{0, 4}};
  EXPECT_THROW(connected_components(4, edges), InputError);
}

TEST(ConnectedComponents, MatchesBfsOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 5 + trial % 30;
    const double p = 1.5 / d;
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j)
        if (u(rng) < p) edges.emplace_back(i, j);
    const Clustering cl = connected_components(d, edges);
    EXPECT_EQ(cl.assignment, bfs_components(d, edges));
    EXPECT_NO_THROW(cl.validate());
  }
}

TEST(Clustering, CanonicalLabels) {
  const std::vector<int> raw{7, 3, 7, 9, 3};
  const Clustering cl = Clustering::canonical(raw);
  EXPECT_EQ(cl.assignment, (std::vector<int>{0, 1, 0, 2, 1}));
  EXPECT_EQ(cl.m, 3);
  const auto members = cl.members();
  EXPECT_EQ(members[1], (std::vector<int>{1, 4}));
  EXPECT_EQ(Clustering::all_in_one(4).m, 1);
  Clustering bad;
  bad.assignment = {1, 0};
  bad.m = 2;
  EXPECT_ANY_THROW(bad.validate());
}

TEST(FusionEdges, FullAndNoFusion) {
  std::mt19937_64 rng(2);
  const SimilarityGraph g = SimilarityGraph::from_dense(Matrix::Ones(4, 4));
  AdmmState s = AdmmState::zeros(2, g, 1.0);
  s.params = random_params(2, 4, rng);
  SolverConfig cfg;
  cfg.nu = 1e6;
  aux_update(s, g, cfg);
  EXPECT_EQ(fusion_edges(s, g).size(), static_cast<std::size_t>(g.edge_count()));
  EXPECT_EQ(extract_clustering(s, g).m, 1);

  cfg.nu = 0.0;
  aux_update(s, g, cfg);
  EXPECT_TRUE(fusion_edges(s, g).empty());
  EXPECT_EQ(extract_clustering(s, g).m, 4);
}

TEST(FusionEdges, AgreeWithThetaLogOnPlantedGroups) {
  // Two groups of three covariates with opposite class effects.
  std::mt19937_64 rng(3);
  const int n = 300;
  Dataset data;
  data.c = 2;
  data.X.resize(n, 6);
  data.y.resize(n);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int s = 0; s < n; ++s) {
    data.y[s] = s % 2;
    const double sign = data.y[s] == 0 ? 1.0 : -1.0;
    for (int j = 0; j < 6; ++j) data.X(s, j) = nd(rng) + (j < 3 ? 0.8 * sign : -0.8 * sign);
  }
  const SimilarityGraph g = SimilarityGraph::from_dense(Matrix::Ones(6, 6));
  SolverConfig cfg;
  cfg.nu = 4.0;
  const auto [state, diag] = solve(data, g, cfg);
  const auto fused = fusion_edges(state, g);
  std::size_t theta_half = 0;
  for (Index k = 0; k < diag.last_theta.size(); ++k) theta_half += diag.last_theta(k) == 0.5;
  EXPECT_EQ(fused.size(), theta_half);
  const Clustering cl = extract_clustering(state, g);
  EXPECT_EQ(cl.one_based(), (std::vector<int>{1, 1, 1, 2, 2, 2}));
  for (auto [i, j] : fused) EXPECT_EQ(i < 3, j < 3);
}
