#pragma once

// Batch command-line front end: synth | fit | path | select | eval | export-dot.
//
// Every output embeds the run configuration and git-style hashes of its
// inputs. Exit codes: 0 success, 1 computational failure, 2 usage error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "covclust/admm.hpp"
#include "covclust/clustering.hpp"
#include "covclust/core_model.hpp"
#include "covclust/io.hpp"
#include "covclust/metrics.hpp"
#include "covclust/model_select.hpp"
#include "covclust/path.hpp"
#include "covclust/synthetic.hpp"

namespace covclust::cli {

using nlohmann::json;

enum ExitCode : int { kSuccess = 0, kFailure = 1, kUsage = 2 };

/// Raised by the hidden --stop-after switch to simulate an interrupted sweep.
struct Interrupted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline int default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// ---------------------------------------------------------------------------
// Configuration

struct SolverFlags {
  double lambda = kDefaultLambda;
  double rho = 1.0;
  double eps = 1e-5;
  int max_iter = 1000;
  double primal_grad_tol = 1e-6;
  int primal_max_iter = 200;
  std::uint64_t seed = 1;
  bool random_init = false;

  SolverConfig to_config(double nu) const {
    SolverConfig c;
    c.lambda = lambda;
    c.rho = rho;
    c.eps = eps;
    c.max_iter = max_iter;
    c.primal_grad_tol = primal_grad_tol;
    c.primal_max_iter = primal_max_iter;
    c.seed = seed;
    c.random_init = random_init;
    c.nu = nu;
    return c;
  }
  json to_json() const {
    return {{"lambda", lambda},       {"rho", rho},
            {"eps", eps},             {"max_iter", max_iter},
            {"primal_grad_tol", primal_grad_tol}, {"primal_max_iter", primal_max_iter},
            {"seed", seed},           {"random_init", random_init}};
  }
};

struct RunConfig {
  std::string command;
  std::string out = ".";
  int threads = default_threads();

  // synth
  int d = 20;
  int n = 200;
  int c = 4;
  int K = 10;
  std::string mode = "agree";
  int test_n = 0;

  // shared inputs
  std::string data;
  std::string similarity;
  std::string similarity_format = "auto";
  int classes = 0;

  // fit / path
  SolverFlags solver;
  double nu = 0.0;
  std::vector<double> nu_list;
  int grid_a_max = 299;
  int grid_stride = 1;
  bool warm_start = true;
  bool early_exit = false;
  bool resume = true;
  int stop_after = 0;

  // select
  std::string path_report;
  std::string selector = "marginal";
  double sigma = 0.0;
  std::vector<double> sigma_grid;
  int folds = 5;
  bool full_hessian = false;
  std::string names;

  // eval
  std::string clustering;
  std::string truth;
  std::string test;
  std::vector<int> kmeans_ks;
  std::string kmeans_features = "both";
  int restarts = 10;
  std::string normalizer = "max";

  // export-dot
  std::string dot_out = "clustering.dot";

  /// The fields the command actually reads; this is what outputs embed.
  json to_json() const {
    json j{{"command", command}, {"threads", threads}};
    auto inputs = [&] {
      j["data"] = data;
      j["similarity"] = similarity;
      j["similarity_format"] = similarity_format;
      j["classes"] = classes;
    };
    if (command == "synth") {
      j.update({{"out", out}, {"d", d}, {"n", n}, {"c", c}, {"K", K}, {"mode", mode}, {"seed", solver.seed},
                {"test_n", test_n}});
    } else if (command == "fit") {
      inputs();
      j.update(solver.to_json());
      j.update({{"out", out}, {"nu", nu}});
    } else if (command == "path") {
      inputs();
      j.update(solver.to_json());
      j.update({{"out", out}, {"nu_list", nu_list}, {"grid_a_max", grid_a_max}, {"grid_stride", grid_stride},
                {"warm_start", warm_start}, {"early_exit", early_exit}});
    } else if (command == "select") {
      j.update({{"out", out}, {"data", data}, {"classes", classes}, {"path", path_report}, {"selector", selector},
                {"sigma", sigma}, {"sigma_grid", sigma_grid}, {"folds", folds}, {"full_hessian", full_hessian},
                {"names", names}});
    } else if (command == "eval") {
      inputs();
      j.update({{"out", out}, {"clustering", clustering}, {"truth", truth}, {"test", test}, {"sigma", sigma},
                {"folds", folds}, {"kmeans_ks", kmeans_ks}, {"kmeans_features", kmeans_features},
                {"restarts", restarts}, {"seed", solver.seed}, {"normalizer", normalizer}});
    } else if (command == "export-dot") {
      j.update({{"clustering", clustering}, {"path", path_report}, {"names", names}, {"out", dot_out}});
    }
    return j;
  }
};

/// Hashes inputs and stamps provenance onto outputs.
class Provenance {
 public:
  explicit Provenance(json config) : config_(std::move(config)) {}

  void add_input(const std::string& role, const std::string& path) {
    if (path.empty()) return;
    inputs_[role] = {{"path", path}, {"git_hash", io::hash_file(path)}};
  }

  json header() const { return {{"run_config", config_}, {"inputs", inputs_}}; }

  json stamp(json body) const {
    if (!body.contains("schema_version")) body["schema_version"] = io::kSchemaVersion;
    body["run_config"] = config_;
    body["inputs"] = inputs_;
    return body;
  }

  std::string comment_line() const { return header().dump(); }

 private:
  json config_;
  json inputs_ = json::object();
};

struct Env {
  std::ostream& out;
  std::ostream& err;
  std::mutex log_mutex;

  template <class... Args>
  void log(const Args&... parts) {
    std::lock_guard<std::mutex> lock(log_mutex);
    (err << ... << parts) << '\n';
  }
};

inline std::filesystem::path out_path(const RunConfig& cfg, const std::string& name) {
  return std::filesystem::path(cfg.out) / name;
}

inline void write_json(const std::filesystem::path& p, const json& j) { io::write_file(p.string(), j.dump(2) + "\n"); }

inline Matrix load_similarity_for(const RunConfig& cfg, int d) {
  if (cfg.similarity.empty()) throw InputError("--similarity is required");
  Matrix S = io::read_similarity_matrix(cfg.similarity, d, io::parse_similarity_format(cfg.similarity_format));
  if (S.rows() != d) {
    throw InputError(cfg.similarity + ": similarity is " + std::to_string(S.rows()) + "x" + std::to_string(S.cols()) +
                     " but the dataset has d=" + std::to_string(d));
  }
  return S;
}

inline SimilarityGraph graph_from(const Matrix& S, const std::string& path) {
  try {
    return SimilarityGraph::from_dense(S);
  } catch (const std::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline Dataset load_data(const RunConfig& cfg) {
  if (cfg.data.empty()) throw InputError("--data is required");
  return io::read_dataset_csv(cfg.data, cfg.classes);
}

inline json iteration_json(const IterationRecord& r) {
  return {{"k", r.k},
          {"primal_norm", r.primal_norm},
          {"dual_norm", r.dual_norm},
          {"g_value", r.g_value},
          {"inner_iters", r.inner_iters}};
}

inline json score_json(const ModelScore& s) {
  return {{"m", s.m},
          {"log_marginal", s.log_marginal},
          {"log_likelihood", s.log_likelihood},
          {"train_accuracy", s.train_accuracy},
          {"sigma", s.sigma},
          {"nu", s.nu_origin},
          {"assignment", s.clustering.one_based()}};
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const RunConfig& cfg, Env& env) {
  const SimilarityMode mode = parse_similarity_mode(cfg.mode);
  const GroundTruth gt = make_ground_truth(cfg.d, cfg.c, cfg.K, mode);
  const Dataset train = sample(gt, cfg.n, cfg.solver.seed);
  const SimilarityEstimate est = estimate_similarity_matrix(train);

  Provenance prov(cfg.to_json());
  const std::string stamp = prov.comment_line();
  io::write_file(out_path(cfg, "dataset.csv").string(), io::dataset_csv(train, prov.header()));
  if (cfg.test_n > 0) {
    // A separate stream so the training sample is unchanged by test_n.
    const Dataset test = sample(gt, cfg.test_n, cfg.solver.seed ^ 0x9E3779B97F4A7C15ULL);
    io::write_file(out_path(cfg, "test.csv").string(), io::dataset_csv(test, prov.header()));
  }
  io::write_file(out_path(cfg, "similarity_true.csv").string(), io::dense_matrix_csv(gt.S, prov.header()));
  io::write_file(out_path(cfg, "similarity_est.csv").string(), io::dense_matrix_csv(est.S, prov.header()));

  json truth = io::clustering_json(gt.truth, 0.0, true);
  truth.erase("nu");
  truth.erase("converged");
  truth.update({{"d", cfg.d},
                {"c", cfg.c},
                {"K", gt.K},
                {"mode", cfg.mode},
                {"seed", cfg.solver.seed},
                {"B", io::matrix_json(gt.B)},
                {"beta0", io::vector_json(gt.beta0)},
                {"ledoit_wolf_shrinkage", est.shrinkage},
                {"estimated_edges", est.graph().edge_count()}});
  write_json(out_path(cfg, "truth.json"), prov.stamp(truth));
  env.log("synth: wrote d=", cfg.d, " n=", cfg.n, " (", to_string(mode), ") to ", cfg.out);
  return kSuccess;
}

// ---------------------------------------------------------------------------
// fit

inline int cmd_fit(const RunConfig& cfg, Env& env) {
  const Dataset data = load_data(cfg);
  const Matrix S = load_similarity_for(cfg, static_cast<int>(data.d()));
  const SimilarityGraph graph = graph_from(S, cfg.similarity);
  const SolverConfig solver = cfg.solver.to_config(cfg.nu);
  solver.validate();

  Provenance prov(cfg.to_json());
  prov.add_input("data", cfg.data);
  prov.add_input("similarity", cfg.similarity);

  std::string diag_log = prov.header().dump() + "\n";
  const IterationSink sink = [&](const IterationRecord& r) { diag_log += iteration_json(r).dump() + "\n"; };
  auto [state, diag] = solve(data, graph, solver, std::nullopt, sink);
  const Clustering cl = extract_clustering(state, graph);

  json fit = io::clustering_json(cl, cfg.nu, diag.converged);
  fit.update({{"iterations", diag.iterations},
              {"threshold", diag.threshold},
              {"objective", full_objective(state.params, data, graph, solver.lambda, solver.nu)},
              {"train_accuracy", accuracy(state.params, data)},
              {"B", io::matrix_json(state.params.B)},
              {"beta0", io::vector_json(state.params.beta0)}});
  if (!diag.history.empty()) {
    fit["final_primal_norm"] = diag.history.back().primal_norm;
    fit["final_dual_norm"] = diag.history.back().dual_norm;
  }
  write_json(out_path(cfg, "fit.json"), prov.stamp(fit));
  write_json(out_path(cfg, "clustering.json"), prov.stamp(io::clustering_json(cl, cfg.nu, diag.converged)));
  io::write_file(out_path(cfg, "diagnostics.jsonl").string(), diag_log);
  save_checkpoint(out_path(cfg, "state.ckpt").string(), state, {cfg.nu, solver.lambda});
  env.log("fit: nu=", cfg.nu, " m=", cl.m, " iterations=", diag.iterations, diag.converged ? "" : " (not converged)");
  return diag.converged ? kSuccess : kFailure;
}

// ---------------------------------------------------------------------------
// path

inline std::string point_name(std::size_t idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "point_%03zu", idx);
  return buf;
}

inline std::vector<double> path_grid(const RunConfig& cfg, const Dataset& data) {
  if (!cfg.nu_list.empty()) {
    for (double v : cfg.nu_list)
      if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("--nu-list values must be finite and >= 0");
    return cfg.nu_list;
  }
  return nu_grid(static_cast<int>(data.n()), cfg.grid_a_max, cfg.grid_stride);
}

inline json path_record_json(std::size_t idx, const PathRecord& r) {
  json j{{"index", idx},
         {"nu", r.nu},
         {"converged", r.converged},
         {"failed", r.failed},
         {"iterations", r.iterations},
         {"duplicate_of_previous", r.duplicate_of_previous}};
  if (r.failed) {
    j["error"] = r.error;
    j["m"] = nullptr;
    j["assignment"] = nullptr;
  } else {
    j["m"] = r.clustering.m;
    j["assignment"] = r.clustering.one_based();
  }
  return j;
}

inline int cmd_path(const RunConfig& cfg, Env& env) {
  const Dataset data = load_data(cfg);
  const Matrix S = load_similarity_for(cfg, static_cast<int>(data.d()));
  const SimilarityGraph graph = graph_from(S, cfg.similarity);
  const SolverConfig solver = cfg.solver.to_config(0.0);
  solver.validate();
  const std::vector<double> grid = path_grid(cfg, data);

  Provenance prov(cfg.to_json());
  prov.add_input("data", cfg.data);
  prov.add_input("similarity", cfg.similarity);

  // Checkpoints are valid only for the same inputs and solver settings.
  const auto ckpt_dir = out_path(cfg, "checkpoints");
  json manifest = prov.header();
  manifest["run_config"].erase("threads");
  manifest["run_config"].erase("early_exit");
  const std::string manifest_text = manifest.dump(2) + "\n";
  const auto manifest_path = ckpt_dir / "manifest.json";
  bool resume_ok = cfg.resume && std::filesystem::exists(manifest_path) &&
                   io::read_file(manifest_path.string()) == manifest_text;
  if (cfg.resume && std::filesystem::exists(manifest_path) && !resume_ok) {
    env.log("path: ignoring checkpoints from a run with different inputs or settings");
  }
  if (!resume_ok) std::filesystem::remove_all(ckpt_dir);
  io::write_file(manifest_path.string(), manifest_text);

  const bool sequential = cfg.warm_start || cfg.threads <= 1 || cfg.stop_after > 0;
  std::size_t resumed = 0;
  std::size_t fresh = 0;
  std::mutex count_mutex;

  PathHooks hooks;
  hooks.resume = [&](std::size_t idx, double nu) -> std::optional<AdmmState> {
    if (!resume_ok) return std::nullopt;
    const auto file = ckpt_dir / (point_name(idx) + ".ckpt");
    if (!std::filesystem::exists(file)) return std::nullopt;
    try {
      auto [state, meta] = load_checkpoint(file.string());
      state.check_against(graph);
      if (meta.nu != nu || meta.lambda != solver.lambda || state.params.B.rows() != data.c) return std::nullopt;
      std::lock_guard<std::mutex> lock(count_mutex);
      ++resumed;
      return state;
    } catch (const std::exception& e) {
      env.log("path: unreadable checkpoint ", file.string(), ": ", e.what());
      return std::nullopt;
    }
  };
  // Per-point iteration logs, flushed when the point finishes (or fails).
  std::map<std::size_t, std::shared_ptr<std::string>> pending_logs;
  const auto log_file = [&](std::size_t idx) { return out_path(cfg, "diagnostics/" + point_name(idx) + ".jsonl"); };
  const auto flush_log = [&](std::size_t idx) {
    std::shared_ptr<std::string> text;
    {
      std::lock_guard<std::mutex> lock(count_mutex);
      const auto it = pending_logs.find(idx);
      if (it == pending_logs.end()) return;
      text = it->second;
      pending_logs.erase(it);
    }
    io::write_file(log_file(idx).string(), *text);
  };
  hooks.iteration_sink = [&](std::size_t idx, double) -> IterationSink {
    auto log = std::make_shared<std::string>(prov.header().dump() + "\n");
    {
      std::lock_guard<std::mutex> lock(count_mutex);
      pending_logs[idx] = log;
    }
    return [log](const IterationRecord& r) { *log += iteration_json(r).dump() + "\n"; };
  };
  hooks.on_point = [&](std::size_t idx, const PathRecord& rec, const AdmmState& state) {
    save_checkpoint((ckpt_dir / (point_name(idx) + ".ckpt")).string(), state, {rec.nu, solver.lambda});
    flush_log(idx);
    env.log("path: [", idx + 1, "/", grid.size(), "] nu=", rec.nu, " m=", rec.clustering.m,
            " iterations=", rec.iterations, rec.converged ? "" : " (not converged)");
    std::lock_guard<std::mutex> lock(count_mutex);
    if (cfg.stop_after > 0 && ++fresh >= static_cast<std::size_t>(cfg.stop_after)) {
      throw Interrupted("stopped after " + std::to_string(fresh) + " solved points (--stop-after)");
    }
  };

  PathOptions opt;
  opt.warm_start = cfg.warm_start;
  opt.early_exit = cfg.early_exit;
  opt.threads = sequential ? 1 : cfg.threads;
  const auto records = run_path(data, graph, solver, grid, opt, hooks);
  for (std::size_t i = 0; i < records.size(); ++i) flush_log(i);

  json recs = json::array();
  std::string csv = io::csv_provenance(prov.header()) + "nu,m,converged,log_marginal,accuracy\n";
  std::string timing;
  std::size_t converged = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    recs.push_back(path_record_json(i, r));
    if (r.converged) ++converged;
    csv += io::format_double(r.nu) + "," + (r.failed ? std::string() : std::to_string(r.clustering.m)) + "," +
           (r.converged ? "true" : "false") + ",,\n";
    timing += point_name(i) + " nu=" + io::format_double(r.nu) +
              (r.resumed ? " resumed" : " wall_seconds=" + std::to_string(r.wall_seconds)) + "\n";
    if (!r.failed) {
      write_json(out_path(cfg, "clusterings/" + point_name(i) + ".json"),
                 prov.stamp(io::clustering_json(r.clustering, r.nu, r.converged)));
    }
  }
  json violations = json::array();
  for (const auto& [a, b] : monotonicity_violations(records)) violations.push_back({a, b});
  json report{{"n", data.n()},       {"d", data.d()},
              {"c", data.c},         {"edges", graph.edge_count()},
              {"grid", grid},        {"records", recs},
              {"converged_count", converged},
              {"monotonicity_violations", violations}};
  write_json(out_path(cfg, "path.json"), prov.stamp(report));
  io::write_file(out_path(cfg, "path.csv").string(), csv);
  io::write_file(out_path(cfg, "timing.log").string(), timing);
  env.log("path: ", records.size(), " points, ", converged, " converged, ", resumed, " resumed from checkpoints");
  if (!violations.empty()) env.log("path: warning: ", violations.size(), " cluster-count monotonicity violations");
  if (converged == 0) {
    env.log("path: no solve converged");
    return kFailure;
  }
  return kSuccess;
}

// ---------------------------------------------------------------------------
// select

inline std::vector<PathRecord> records_from_report(const json& report, int d) {
  std::vector<PathRecord> out;
  if (!report.contains("records")) throw InputError("path report lacks 'records'");
  for (const auto& j : report.at("records")) {
    PathRecord r;
    r.nu = j.at("nu").get<double>();
    r.converged = j.at("converged").get<bool>();
    r.failed = j.at("failed").get<bool>();
    r.iterations = j.at("iterations").get<int>();
    r.duplicate_of_previous = j.at("duplicate_of_previous").get<bool>();
    if (!r.failed) {
      r.clustering = io::clustering_from_json(j);
      if (r.clustering.d() != d) throw InputError("path report clustering size does not match the dataset");
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw InputError("path report has no records");
  return out;
}

inline std::vector<std::string> load_names(const RunConfig& cfg, int d) {
  return cfg.names.empty() ? std::vector<std::string>{} : io::read_feature_names(cfg.names, d);
}

inline double resolve_sigma(const RunConfig& cfg, const Dataset& data, std::string& source) {
  if (cfg.sigma > 0.0) {
    source = "given";
    return cfg.sigma;
  }
  source = "cross_validation";
  return select_sigma(data, cfg.folds, cfg.sigma_grid.empty() ? default_sigma_grid() : cfg.sigma_grid);
}

inline int cmd_select(const RunConfig& cfg, Env& env) {
  if (cfg.path_report.empty()) throw InputError("--path is required");
  const Dataset data = load_data(cfg);
  const int d = static_cast<int>(data.d());
  const json report = io::read_json(cfg.path_report);
  std::vector<PathRecord> records = records_from_report(report, d);
  const auto names = load_names(cfg, d);

  Provenance prov(cfg.to_json());
  prov.add_input("data", cfg.data);
  prov.add_input("path", cfg.path_report);
  prov.add_input("names", cfg.names);

  std::string sigma_source;
  const double sigma = resolve_sigma(cfg, data, sigma_source);
  ScoreOptions sopt;
  sopt.full_hessian = cfg.full_hessian;
  const ScorePathResult scored = score_path(data, records, sigma, sopt, cfg.threads);
  for (const auto& w : scored.warnings) env.log("select: warning: ", w);
  if (!scored.best) {
    env.log("select: no clustering could be scored");
    return kFailure;
  }

  // Unique clusterings ranked by log marginal, then m, then nu.
  std::vector<const ModelScore*> unique;
  for (const auto& r : records) {
    if (!r.score) continue;
    if (std::find(unique.begin(), unique.end(), r.score.get()) == unique.end()) unique.push_back(r.score.get());
  }
  std::stable_sort(unique.begin(), unique.end(), [](const ModelScore* a, const ModelScore* b) {
    if (a->log_marginal != b->log_marginal) return a->log_marginal > b->log_marginal;
    if (a->m != b->m) return a->m < b->m;
    return a->nu_origin < b->nu_origin;
  });
  json ranked = json::array();
  for (std::size_t i = 0; i < unique.size(); ++i) {
    json s = score_json(*unique[i]);
    s["rank"] = i + 1;
    json nus = json::array();
    for (const auto& r : records)
      if (r.score.get() == unique[i]) nus.push_back(r.nu);
    s["nus"] = nus;
    ranked.push_back(std::move(s));
  }

  std::size_t pick = *scored.best;
  json selection{{"selector", cfg.selector}, {"sigma", sigma}, {"sigma_source", sigma_source}};
  if (cfg.selector == "cv") {
    const CvChoice choice = cv_select(records, data, sigma, cfg.folds);
    pick = choice.record;
    selection.update({{"cv_mean", choice.mean}, {"cv_sd", choice.sd}, {"cv_best_mean", choice.best_mean},
                      {"cv_best_sd", choice.best_sd}});
  }
  const PathRecord& chosen = records[pick];
  json selected = io::clustering_json(chosen.clustering, chosen.nu, chosen.converged);
  selected.update(selection);
  if (chosen.score) {
    selected["log_marginal"] = chosen.score->log_marginal;
    selected["train_accuracy"] = chosen.score->train_accuracy;
  }

  std::string csv = io::csv_provenance(prov.header()) + "nu,m,converged,log_marginal,accuracy\n";
  for (const auto& r : records) {
    csv += io::format_double(r.nu) + "," + (r.failed ? std::string() : std::to_string(r.clustering.m)) + "," +
           (r.converged ? "true" : "false") + "," +
           (r.score ? io::format_double(r.score->log_marginal) + "," + io::format_double(r.score->train_accuracy)
                    : std::string(","));
    csv += "\n";
  }

  write_json(out_path(cfg, "scores.json"),
             prov.stamp({{"sigma", sigma}, {"sigma_source", sigma_source}, {"fits", scored.fits},
                         {"ranked", ranked}, {"warnings", scored.warnings}}));
  write_json(out_path(cfg, "selected.json"), prov.stamp(selected));
  io::write_file(out_path(cfg, "selected.dot").string(),
                 io::clustering_dot(chosen.clustering, names, {prov.comment_line()}));
  io::write_file(out_path(cfg, "path_scored.csv").string(), csv);
  env.log("select: ", cfg.selector, " picked nu=", chosen.nu, " m=", chosen.clustering.m, " (sigma=", sigma, ", ",
          scored.fits, " fits)");
  return kSuccess;
}

// ---------------------------------------------------------------------------
// eval

struct EvalRow {
  std::string method;
  Clustering clustering;
  std::optional<double> anmi;
  std::optional<double> heldout_accuracy;
  std::optional<double> train_accuracy;
  std::optional<double> log_marginal;
};

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::string optional_csv(const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); }

inline int cmd_eval(const RunConfig& cfg, Env& env) {
  if (cfg.clustering.empty()) throw InputError("--clustering is required");
  const json cl_json = io::read_json(cfg.clustering);
  const Clustering proposed = io::clustering_from_json(cl_json);
  const int d = proposed.d();
  const AmiNormalizer normalizer = parse_ami_normalizer(cfg.normalizer);

  Provenance prov(cfg.to_json());
  prov.add_input("clustering", cfg.clustering);
  prov.add_input("truth", cfg.truth);
  prov.add_input("data", cfg.data);
  prov.add_input("test", cfg.test);
  prov.add_input("similarity", cfg.similarity);

  std::optional<Clustering> truth;
  if (!cfg.truth.empty()) {
    truth = io::clustering_from_json(io::read_json(cfg.truth));
    if (truth->d() != d) throw InputError("truth and clustering cover different numbers of covariates");
  }
  std::optional<Dataset> data;
  std::optional<Dataset> test;
  if (!cfg.data.empty()) {
    data = load_data(cfg);
    if (data->d() != d) throw InputError(cfg.data + ": dataset d does not match the clustering");
  }
  if (!cfg.test.empty()) {
    if (!data) throw InputError("--test needs --data for training");
    test = io::read_dataset_csv(cfg.test, data->c);
    if (test->d() != d) throw InputError(cfg.test + ": test set d does not match the clustering");
  }

  double sigma = 0.0;
  std::string sigma_source;
  if (data) {
    if (cfg.sigma > 0.0) {
      sigma = cfg.sigma;
      sigma_source = "given";
    } else if (cl_json.contains("sigma")) {
      sigma = cl_json.at("sigma").get<double>();
      sigma_source = "clustering";
    } else {
      sigma = resolve_sigma(cfg, *data, sigma_source);
    }
  }

  std::vector<EvalRow> rows;
  auto add_row = [&](std::string method, const Clustering& cl) {
    EvalRow row{std::move(method), cl, std::nullopt, std::nullopt, std::nullopt, std::nullopt};
    if (truth) row.anmi = anmi(cl, *truth, normalizer);
    if (data) {
      const ModelScore s = log_marginal(*data, cl, sigma);
      row.log_marginal = s.log_marginal;
      row.train_accuracy = s.train_accuracy;
      if (test) row.heldout_accuracy = accuracy(s.map_params, project_dataset(*test, cl).data);
    }
    rows.push_back(std::move(row));
  };

  add_row("proposed", proposed);
  if (data) add_row("full_model", Clustering::singletons(d));
  if (data && !cfg.similarity.empty()) {
    const Matrix S = load_similarity_for(cfg, d);
    std::vector<int> ks = cfg.kmeans_ks;
    if (ks.empty())
      for (int k = 1; k <= d; ++k) ks.push_back(k);
    for (int k : ks)
      if (k < 1 || k > d) throw InputError("--kmeans-ks values must lie in [1, d]");
    std::vector<std::string> feature_names;
    if (cfg.kmeans_features == "both") feature_names = {"rows", "spectral"};
    else feature_names = {cfg.kmeans_features};
    for (const auto& fname : feature_names) {
      const KMeansFeatures features = parse_kmeans_features(fname);
      add_row("kmeans_" + fname + "_matched_m",
              kmeans_similarity(S, proposed.m, cfg.solver.seed, cfg.restarts, features));
      const BaselineSelection base =
          kmeans_baseline_select(*data, S, ks, sigma, cfg.solver.seed, cfg.restarts, features);
      add_row("kmeans_" + fname + "_selected", base.scored[base.best].clustering);
    }
  }

  json reports = json::array();
  std::string csv = io::csv_provenance(prov.header()) + "method,m,anmi,heldout_accuracy,train_accuracy,log_marginal,seed\n";
  for (const auto& r : rows) {
    reports.push_back({{"method", r.method},
                       {"m", r.clustering.m},
                       {"anmi", optional_json(r.anmi)},
                       {"heldout_accuracy", optional_json(r.heldout_accuracy)},
                       {"train_accuracy", optional_json(r.train_accuracy)},
                       {"log_marginal", optional_json(r.log_marginal)},
                       {"seed", cfg.solver.seed}});
    csv += r.method + "," + std::to_string(r.clustering.m) + "," + optional_csv(r.anmi) + "," +
           optional_csv(r.heldout_accuracy) + "," + optional_csv(r.train_accuracy) + "," +
           optional_csv(r.log_marginal) + "," + std::to_string(cfg.solver.seed) + "\n";
  }
  json body{{"normalizer", cfg.normalizer}, {"reports", reports}};
  if (data) body.update({{"sigma", sigma}, {"sigma_source", sigma_source}});
  write_json(out_path(cfg, "eval.json"), prov.stamp(body));
  io::write_file(out_path(cfg, "comparison.csv").string(), csv);
  for (const auto& r : rows) {
    env.log("eval: ", r.method, " m=", r.clustering.m, r.anmi ? " anmi=" + io::format_double(*r.anmi) : "",
            r.heldout_accuracy ? " heldout_accuracy=" + io::format_double(*r.heldout_accuracy) : "");
  }
  return kSuccess;
}

// ---------------------------------------------------------------------------
// export-dot

inline int cmd_export_dot(const RunConfig& cfg, Env& env) {
  if (cfg.clustering.empty() == cfg.path_report.empty()) {
    throw InputError("export-dot needs exactly one of --clustering or --path");
  }
  Provenance prov(cfg.to_json());
  prov.add_input("clustering", cfg.clustering);
  prov.add_input("path", cfg.path_report);
  prov.add_input("names", cfg.names);
  std::string dot;
  if (!cfg.clustering.empty()) {
    const Clustering cl = io::clustering_from_json(io::read_json(cfg.clustering));
    dot = io::clustering_dot(cl, load_names(cfg, cl.d()), {prov.comment_line()});
  } else {
    const json report = io::read_json(cfg.path_report);
    const int d = report.at("d").get<int>();
    const auto records = records_from_report(report, d);
    std::vector<std::pair<Clustering, double>> levels;
    for (const auto& r : records) {
      if (r.failed) continue;
      const bool seen = std::any_of(levels.begin(), levels.end(), [&](const auto& l) { return l.first == r.clustering; });
      if (!seen) levels.emplace_back(r.clustering, r.nu);
    }
    std::stable_sort(levels.begin(), levels.end(), [](const auto& a, const auto& b) { return a.first.m < b.first.m; });
    dot = io::hierarchy_dot(levels, load_names(cfg, d), {prov.comment_line()});
  }
  io::write_file(cfg.dot_out, dot);
  env.log("export-dot: wrote ", cfg.dot_out);
  return kSuccess;
}

// ---------------------------------------------------------------------------
// Argument handling

namespace detail {

/// Splices key=value lines from --config files into the argument list for keys
/// not given on the command line, so explicit flags always win.
inline std::vector<std::string> merge_config_file(std::vector<std::string> args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (config_path.empty()) return args;
  std::istringstream is(io::read_file(config_path));
  std::string line;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    const auto t = io::detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw CLI::ValidationError(config_path + ":" + std::to_string(no), "expected key=value");
    }
    std::string key(io::detail::trim(t.substr(0, eq)));
    std::string value(io::detail::trim(t.substr(eq + 1)));
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0 || (key.rfind("warm-start", 0) == 0 && a == "--no-warm-start") ||
             (key == "resume" && a == "--no-resume");
    });
    if (!given) args.push_back(flag + "=" + value);
  }
  return args;
}

inline void add_solver_flags(CLI::App* sub, SolverFlags& s) {
  sub->add_option("--lambda", s.lambda, "ridge weight on B")->check(CLI::NonNegativeNumber);
  sub->add_option("--rho", s.rho, "ADMM penalty parameter")->check(CLI::PositiveNumber);
  sub->add_option("--eps", s.eps, "relative stopping tolerance")->check(CLI::PositiveNumber);
  sub->add_option("--max-iter", s.max_iter, "ADMM iteration cap")->check(CLI::PositiveNumber);
  sub->add_option("--primal-grad-tol", s.primal_grad_tol, "L-BFGS gradient tolerance")->check(CLI::PositiveNumber);
  sub->add_option("--primal-max-iter", s.primal_max_iter, "L-BFGS iteration cap")->check(CLI::PositiveNumber);
  sub->add_option("--seed", s.seed, "seed for random initialization");
  sub->add_flag("--random-init", s.random_init, "cold start from a random state instead of zeros");
}

inline void add_input_flags(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--data", cfg.data, "dataset CSV (f1..fd,label)");
  sub->add_option("--similarity", cfg.similarity, "similarity CSV (dense, or sparse i,j,weight)");
  sub->add_option("--similarity-format", cfg.similarity_format, "auto|dense|sparse")
      ->check(CLI::IsMember({"auto", "dense", "sparse"}));
  sub->add_option("--classes", cfg.classes, "number of classes (default: largest label)")->check(CLI::NonNegativeNumber);
}

}  // namespace detail

/// Entry point shared by the executable and the tests.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Env env{out, err};
  RunConfig cfg;
  CLI::App app{"Convex covariate clustering for multinomial logistic regression", "covclust"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every command");
  app.add_option("--config", "key=value file merged under explicit flags");

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", "key=value file merged under explicit flags");
    sub->add_option("--threads", cfg.threads, "worker threads (default: available parallelism)")
        ->check(CLI::PositiveNumber);
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset with planted covariate clusters");
  common(synth);
  synth->add_option("--out", cfg.out, "output directory");
  synth->add_option("--d", cfg.d, "number of covariates")->check(CLI::PositiveNumber);
  synth->add_option("--n", cfg.n, "training samples (a multiple of c)")->check(CLI::PositiveNumber);
  synth->add_option("--c", cfg.c, "number of classes")->check(CLI::Range(2, 1 << 20));
  synth->add_option("--K", cfg.K, "number of planted clusters")->check(CLI::PositiveNumber);
  synth->add_option("--mode", cfg.mode, "agree|contradict")->check(CLI::IsMember({"agree", "contradict"}));
  synth->add_option("--seed", cfg.solver.seed, "sampling seed");
  synth->add_option("--test-n", cfg.test_n, "held-out samples written to test.csv")->check(CLI::NonNegativeNumber);

  CLI::App* fit = app.add_subcommand("fit", "solve one problem at a fixed nu");
  common(fit);
  detail::add_input_flags(fit, cfg);
  detail::add_solver_flags(fit, cfg.solver);
  fit->add_option("--out", cfg.out, "output directory");
  fit->add_option("--nu", cfg.nu, "fusion weight")->check(CLI::NonNegativeNumber);

  CLI::App* path = app.add_subcommand("path", "sweep the nu grid with warm starts and checkpoints");
  common(path);
  detail::add_input_flags(path, cfg);
  detail::add_solver_flags(path, cfg.solver);
  path->add_option("--out", cfg.out, "output directory");
  path->add_option("--nu-list", cfg.nu_list, "explicit comma-separated grid, overrides the default")->delimiter(',');
  path->add_option("--grid-a-max", cfg.grid_a_max, "largest exponent a in n*2^(-a/10)")->check(CLI::NonNegativeNumber);
  path->add_option("--grid-stride", cfg.grid_stride, "keep every stride-th grid point")->check(CLI::PositiveNumber);
  path->add_flag("--warm-start,!--no-warm-start", cfg.warm_start, "warm-start each point from the previous one");
  path->add_flag("--early-exit", cfg.early_exit, "stop once every covariate is its own cluster");
  path->add_flag("--resume,!--no-resume", cfg.resume, "reuse finished checkpoints in the output directory");
  path->add_option("--stop-after", cfg.stop_after)->group("")->check(CLI::NonNegativeNumber);

  CLI::App* select = app.add_subcommand("select", "score the path and pick the most plausible clustering");
  common(select);
  select->add_option("--data", cfg.data, "dataset CSV the path was computed on");
  select->add_option("--classes", cfg.classes, "number of classes")->check(CLI::NonNegativeNumber);
  select->add_option("--path", cfg.path_report, "path.json from the path command");
  select->add_option("--out", cfg.out, "output directory");
  select->add_option("--selector", cfg.selector, "marginal|cv")->check(CLI::IsMember({"marginal", "cv"}));
  select->add_option("--sigma", cfg.sigma, "prior scale (default: chosen by cross-validation)")
      ->check(CLI::NonNegativeNumber);
  select->add_option("--sigma-grid", cfg.sigma_grid, "candidate prior scales")->delimiter(',');
  select->add_option("--folds", cfg.folds, "cross-validation folds")->check(CLI::Range(2, 1 << 20));
  select->add_flag("--full-hessian", cfg.full_hessian, "use the dense Hessian in the Laplace approximation");
  select->add_option("--names", cfg.names, "file with one covariate name per line");

  CLI::App* eval = app.add_subcommand("eval", "compare a clustering against truth and the k-means baseline");
  common(eval);
  detail::add_input_flags(eval, cfg);
  eval->add_option("--clustering", cfg.clustering, "clustering JSON to evaluate");
  eval->add_option("--truth", cfg.truth, "ground-truth clustering JSON");
  eval->add_option("--test", cfg.test, "held-out dataset CSV");
  eval->add_option("--out", cfg.out, "output directory");
  eval->add_option("--sigma", cfg.sigma, "prior scale (default: from the clustering file, else cross-validation)")
      ->check(CLI::NonNegativeNumber);
  eval->add_option("--folds", cfg.folds, "cross-validation folds when sigma must be chosen")
      ->check(CLI::Range(2, 1 << 20));
  eval->add_option("--kmeans-ks", cfg.kmeans_ks, "k values for the baseline (default: 1..d)")->delimiter(',');
  eval->add_option("--kmeans-features", cfg.kmeans_features, "rows|spectral|both")
      ->check(CLI::IsMember({"rows", "spectral", "both"}));
  eval->add_option("--restarts", cfg.restarts, "k-means restarts")->check(CLI::PositiveNumber);
  eval->add_option("--seed", cfg.solver.seed, "k-means seed");
  eval->add_option("--normalizer", cfg.normalizer, "max|min|arithmetic|geometric")
      ->check(CLI::IsMember({"max", "min", "arithmetic", "geometric"}));

  CLI::App* dot = app.add_subcommand("export-dot", "write a clustering or the path hierarchy as DOT");
  common(dot);
  dot->add_option("--clustering", cfg.clustering, "clustering JSON");
  dot->add_option("--path", cfg.path_report, "path.json; exports the hierarchy of distinct clusterings");
  dot->add_option("--names", cfg.names, "file with one covariate name per line");
  dot->add_option("--out", cfg.dot_out, "output .dot file");

  try {
    if (args.empty()) throw CLI::CallForHelp();
    std::vector<std::string> tail(args.begin() + 1, args.end());
    tail = detail::merge_config_file(std::move(tail));
    std::reverse(tail.begin(), tail.end());  // CLI11 consumes a reversed vector
    app.parse(tail);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  cfg.command = chosen->get_name();
  try {
    if (cfg.command == "synth") return cmd_synth(cfg, env);
    if (cfg.command == "fit") return cmd_fit(cfg, env);
    if (cfg.command == "path") return cmd_path(cfg, env);
    if (cfg.command == "select") return cmd_select(cfg, env);
    if (cfg.command == "eval") return cmd_eval(cfg, env);
    return cmd_export_dot(cfg, env);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Interrupted& e) {
    err << "interrupted: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace covclust::cli
