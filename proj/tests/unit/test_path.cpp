#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "covclust/metrics.hpp"
#include "covclust/path.hpp"
#include "covclust/synthetic.hpp"
#include "test_util.hpp"

using namespace covclust;
using namespace covclust::testing;

namespace {

struct Planted {
  GroundTruth gt;
  Dataset data;
  SimilarityGraph graph;
};

Planted planted(std::uint64_t seed) {
  Planted p{make_ground_truth(8, 2, 2, SimilarityMode::Agree), {}, {}};
  p.data = sample(p.gt, 400, seed);
  p.graph = SimilarityGraph::from_dense(p.gt.S);
  return p;
}

SolverConfig fast_config() {
  SolverConfig cfg;
  cfg.rho = 10.0;
  return cfg;
}

}  // namespace

TEST(NuGrid, FormulaAndShape) {
  const auto g = nu_grid(100);
  ASSERT_EQ(g.size(), 300u);
  EXPECT_DOUBLE_EQ(g[0], 100.0);
  EXPECT_DOUBLE_EQ(g[10], 50.0);
  for (std::size_t a = 1; a < g.size(); ++a) EXPECT_LT(g[a], g[a - 1]);
  for (std::size_t a = 0; a + 10 < g.size(); ++a) EXPECT_NEAR(g[a] / g[a + 10], 2.0, 1e-12);
  const auto s = nu_grid(100, 299, 10);
  ASSERT_EQ(s.size(), 30u);
  EXPECT_DOUBLE_EQ(s[1], 50.0);
  EXPECT_THROW(nu_grid(0), InputError);
}

TEST(RunPath, ZeroNuGivesSingletons) {
  const Planted p = planted(1);
  const auto recs = run_path(p.data, p.graph, fast_config(), {0.0});
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].clustering.m, 8);
  EXPECT_TRUE(recs[0].converged);
}

TEST(RunPath, HugeNuGivesOneCluster) {
  const Planted p = planted(2);
  Matrix S = Matrix::Ones(8, 8);
  const auto recs = run_path(p.data, SimilarityGraph::from_dense(S), fast_config(), {1e6 * 400});
  EXPECT_EQ(recs[0].clustering.m, 1);
}

TEST(RunPath, PathContainsPlantedPartition) {
  const Planted p = planted(3);
  PathOptions opt;
  opt.early_exit = true;
  const auto recs = run_path(p.data, p.graph, fast_config(), nu_grid(400, 299, 5), opt);
  bool found = false;
  for (const auto& r : recs) found |= anmi(r.clustering, p.gt.truth) == 1.0;
  EXPECT_TRUE(found);
  // Early exit stops at the first record where every covariate is alone.
  EXPECT_EQ(recs.back().clustering.m, 8);
  for (std::size_t i = 0; i + 1 < recs.size(); ++i) EXPECT_LT(recs[i].clustering.m, 8);
  for (std::size_t i = 1; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].duplicate_of_previous, recs[i].clustering == recs[i - 1].clustering);
  }
}

TEST(RunPath, WarmAndColdStartsAgree) {
  const Planted p = planted(4);
  const auto grid = nu_grid(400, 200, 20);
  const auto warm = run_path(p.data, p.graph, fast_config(), grid);
  PathOptions cold;
  cold.warm_start = false;
  const auto seq = run_path(p.data, p.graph, fast_config(), grid, cold);
  cold.threads = 3;
  const auto par = run_path(p.data, p.graph, fast_config(), grid, cold);
  std::size_t agree = 0, both = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    EXPECT_EQ(seq[i].clustering, par[i].clustering);
    EXPECT_EQ(seq[i].iterations, par[i].iterations);
    if (warm[i].converged && seq[i].converged) {
      ++both;
      agree += warm[i].clustering == seq[i].clustering;
    }
  }
  ASSERT_GT(both, 0u);
  EXPECT_GE(double(agree) / double(both), 0.9);
}

TEST(RunPath, FailedPointIsRecordedAndPathContinues) {
  const Planted p = planted(5);
  SolverConfig cfg = fast_config();
  PathHooks hooks;
  hooks.iteration_sink = [](std::size_t idx, double) -> IterationSink {
    if (idx != 1) return {};
    return [](const IterationRecord&) { throw SolverError("injected failure"); };
  };
  const auto recs = run_path(p.data, p.graph, cfg, {50.0, 10.0, 1.0}, {}, hooks);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_TRUE(recs[1].failed);
  EXPECT_FALSE(recs[1].error.empty());
  EXPECT_FALSE(recs[2].failed);
}

TEST(RunPath, ResumeHookSkipsSolving) {
  const Planted p = planted(6);
  const auto grid = nu_grid(400, 100, 25);
  std::vector<std::optional<AdmmState>> saved(grid.size());
  PathHooks record;
  record.on_point = [&](std::size_t idx, const PathRecord&, const AdmmState& s) { saved[idx] = s; };
  const auto first = run_path(p.data, p.graph, fast_config(), grid, {}, record);

  PathHooks again;
  int solved = 0;
  again.resume = [&](std::size_t idx, double) { return idx < 2 ? saved[idx] : std::nullopt; };
  again.on_point = [&](std::size_t, const PathRecord&, const AdmmState&) { ++solved; };
  const auto second = run_path(p.data, p.graph, fast_config(), grid, {}, again);
  EXPECT_EQ(solved, static_cast<int>(grid.size()) - 2);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    EXPECT_EQ(first[i].clustering, second[i].clustering);
    EXPECT_EQ(first[i].iterations, second[i].iterations);
    EXPECT_EQ(second[i].resumed, i < 2);
  }
}

TEST(Monotonicity, ReportsViolations) {
  std::vector<PathRecord> recs(3);
  recs[0].nu = 3;
  recs[0].clustering = Clustering::all_in_one(4);
  recs[1].nu = 2;
  recs[1].clustering = Clustering::singletons(4);
  recs[2].nu = 1;
  recs[2].clustering = Clustering::canonical(std::vector<int>{0, 0, 1, 1});
  const auto v = monotonicity_violations(recs);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0], std::make_pair(std::size_t{1}, std::size_t{2}));
}

TEST(ScorePath, DeduplicatesFits) {
  const Planted p = planted(7);
  std::vector<PathRecord> same(4);
  for (std::size_t i = 0; i < 4; ++i) {
    same[i].nu = 4.0 - i;
    same[i].clustering = p.gt.truth;
  }
  const auto one = score_path(p.data, same, 1.0);
  EXPECT_EQ(one.fits, 1u);
  for (const auto& r : same) EXPECT_EQ(r.score.get(), same[0].score.get());

  std::vector<PathRecord> three(5);
  const std::vector<Clustering> cls{Clustering::all_in_one(8), p.gt.truth, Clustering::singletons(8)};
  const int pick[5] = {0, 0, 1, 1, 2};
  for (std::size_t i = 0; i < 5; ++i) {
    three[i].nu = 5.0 - i;
    three[i].clustering = cls[pick[i]];
  }
  const auto res = score_path(p.data, three, 1.0, {}, 2);
  EXPECT_EQ(res.fits, 3u);
  std::set<const ModelScore*> distinct;
  for (const auto& r : three) distinct.insert(r.score.get());
  EXPECT_EQ(distinct.size(), 3u);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      EXPECT_EQ(three[i].score == three[j].score, three[i].clustering == three[j].clustering);
  ASSERT_TRUE(res.best.has_value());
  EXPECT_EQ(three[*res.best].clustering, p.gt.truth);
  EXPECT_TRUE(three[*res.best].best);
  // Ties resolve to the smaller nu among equal clusterings.
  EXPECT_EQ(*res.best, 3u);
}

TEST(ScorePath, SelectedIsNearBestAnmiOnSyntheticPaths) {
  // Three groups of four covariates, three classes.
  const GroundTruth gt = make_ground_truth(12, 3, 3, SimilarityMode::Agree);
  const SimilarityGraph graph = SimilarityGraph::from_dense(gt.S);
  std::vector<double> gaps;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset data = sample(gt, 600, 10 + seed);
    PathOptions opt;
    opt.early_exit = true;
    auto recs = run_path(data, graph, fast_config(), nu_grid(600, 299, 5), opt);
    const auto res = score_path(data, recs, select_sigma(data));
    double best_anmi = 0.0;
    for (const auto& r : recs) best_anmi = std::max(best_anmi, anmi(r.clustering, gt.truth));
    gaps.push_back(best_anmi - anmi(recs[*res.best].clustering, gt.truth));
  }
  std::sort(gaps.begin(), gaps.end());
  EXPECT_LE(gaps[2], 0.05);
}
