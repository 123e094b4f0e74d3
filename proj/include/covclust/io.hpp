#pragma once

// File formats: dataset CSV, similarity CSV (dense or sparse triples),
// clustering JSON, DOT export, and git-style content hashes.

#include <openssl/evp.h>

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "covclust/clustering.hpp"
#include "covclust/core_model.hpp"
#include "covclust/errors.hpp"

namespace covclust::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Writes through a temporary file so readers never see partial output.
inline void write_file(const std::string& path, std::string_view contents) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot write " + tmp);
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw InputError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

/// SHA-1 of "blob <size>\0<contents>", as git computes object ids.
inline std::string git_blob_hash(std::string_view contents) {
  const std::string header = "blob " + std::to_string(contents.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, contents.data(), contents.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

inline std::string hash_file(const std::string& path) { return git_blob_hash(read_file(path)); }

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("double formatting failed");
  return std::string(buf, end);
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw InputError(where + ": not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline int parse_int(std::string_view s, const std::string& where) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw InputError(where + ": not an integer: '" + std::string(s) + "'");
  }
  return v;
}

/// Non-empty lines with '#' comment lines removed, paired with 1-based line numbers.
inline std::vector<std::pair<int, std::string>> data_lines(const std::string& text) {
  std::vector<std::pair<int, std::string>> out;
  std::istringstream is(text);
  std::string line;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.emplace_back(no, std::string(t));
  }
  return out;
}

inline bool looks_numeric(std::string_view s) {
  double v;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

}  // namespace detail

/// Comment block placed at the top of CSV outputs.
inline std::string csv_provenance(const json& provenance) { return "# " + provenance.dump() + "\n"; }

/// Header f1..fd,label; labels 1..c. `classes` <= 0 infers c as the largest label.
inline Dataset read_dataset_csv(const std::string& path, int classes = 0) {
  const auto lines = detail::data_lines(read_file(path));
  if (lines.empty()) throw InputError(path + ": empty dataset file");
  const auto header = detail::split(lines.front().second);
  if (header.size() < 2 || header.back() != "label") {
    throw InputError(path + ": header must be f1,...,fd,label");
  }
  const Index d = static_cast<Index>(header.size()) - 1;
  for (Index j = 0; j < d; ++j) {
    if (header[j] != "f" + std::to_string(j + 1)) {
      throw InputError(path + ": header column " + std::to_string(j + 1) + " should be f" + std::to_string(j + 1));
    }
  }
  const Index n = static_cast<Index>(lines.size()) - 1;
  if (n < 1) throw InputError(path + ": no samples");
  Matrix X(n, d);
  std::vector<int> labels(n);
  int max_label = 0;
  for (Index s = 0; s < n; ++s) {
    const auto& [no, text] = lines[s + 1];
    const std::string where = path + ":" + std::to_string(no);
    const auto cells = detail::split(text);
    if (static_cast<Index>(cells.size()) != d + 1) throw InputError(where + ": expected " + std::to_string(d + 1) + " columns");
    for (Index j = 0; j < d; ++j) X(s, j) = detail::parse_double(cells[j], where);
    labels[s] = detail::parse_int(cells[d], where);
    max_label = std::max(max_label, labels[s]);
  }
  const int c = classes > 0 ? classes : std::max(2, max_label);
  try {
    return Dataset::from_one_based(std::move(X), labels, c);
  } catch (const std::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline std::string dataset_csv(const Dataset& data, const json& provenance = nullptr) {
  std::string out;
  if (!provenance.is_null()) out += csv_provenance(provenance);
  for (Index j = 0; j < data.d(); ++j) out += "f" + std::to_string(j + 1) + ",";
  out += "label\n";
  for (Index s = 0; s < data.n(); ++s) {
    for (Index j = 0; j < data.d(); ++j) out += format_double(data.X(s, j)) + ",";
    out += std::to_string(data.y[s] + 1) + "\n";
  }
  return out;
}

inline std::string dense_matrix_csv(const Matrix& M, const json& provenance = nullptr) {
  std::string out;
  if (!provenance.is_null()) out += csv_provenance(provenance);
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) {
      if (j) out += ",";
      out += format_double(M(i, j));
    }
    out += "\n";
  }
  return out;
}

enum class SimilarityFormat { Auto, Dense, Sparse };

inline SimilarityFormat parse_similarity_format(std::string_view s) {
  if (s == "auto") return SimilarityFormat::Auto;
  if (s == "dense") return SimilarityFormat::Dense;
  if (s == "sparse") return SimilarityFormat::Sparse;
  throw InputError("unknown similarity format '" + std::string(s) + "' (expected auto|dense|sparse)");
}

/// Dense d x d matrix of similarities. A sparse file is a CSV of 1-based
/// (i, j, weight) rows with an optional "i,j,weight" header; `d` is required
/// for it unless every covariate appears in some edge.
inline Matrix read_similarity_matrix(const std::string& path, int d = 0, SimilarityFormat fmt = SimilarityFormat::Auto) {
  const auto lines = detail::data_lines(read_file(path));
  if (lines.empty()) throw InputError(path + ": empty similarity file");
  const auto first = detail::split(lines.front().second);
  bool has_header = !first.empty() && !detail::looks_numeric(first.front());
  if (fmt == SimilarityFormat::Auto) {
    const bool triple_header = has_header && first.size() == 3 && first[0] == "i" && first[1] == "j";
    fmt = triple_header ? SimilarityFormat::Sparse : SimilarityFormat::Dense;
  }
  if (fmt == SimilarityFormat::Dense) {
    if (has_header) throw InputError(path + ": dense similarity matrix must not have a header");
    const Index rows = static_cast<Index>(lines.size());
    Matrix S(rows, rows);
    for (Index i = 0; i < rows; ++i) {
      const std::string where = path + ":" + std::to_string(lines[i].first);
      const auto cells = detail::split(lines[i].second);
      if (static_cast<Index>(cells.size()) != rows) throw InputError(where + ": dense similarity matrix is not square");
      for (Index j = 0; j < rows; ++j) S(i, j) = detail::parse_double(cells[j], where);
    }
    return S;
  }
  std::vector<std::tuple<int, int, double>> triples;
  int max_id = 0;
  for (std::size_t k = has_header ? 1 : 0; k < lines.size(); ++k) {
    const std::string where = path + ":" + std::to_string(lines[k].first);
    const auto cells = detail::split(lines[k].second);
    if (cells.size() != 3) throw InputError(where + ": expected i,j,weight");
    const int i = detail::parse_int(cells[0], where);
    const int j = detail::parse_int(cells[1], where);
    const double w = detail::parse_double(cells[2], where);
    if (i < 1 || j < 1) throw InputError(where + ": covariate ids are 1-based");
    max_id = std::max({max_id, i, j});
    triples.emplace_back(i - 1, j - 1, w);
  }
  const int dim = d > 0 ? d : max_id;
  if (max_id > dim) throw InputError(path + ": edge endpoint " + std::to_string(max_id) + " exceeds d=" + std::to_string(dim));
  try {
    return SimilarityGraph::from_triples(dim, triples).to_dense();
  } catch (const std::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline std::string sparse_similarity_csv(const SimilarityGraph& g, const json& provenance = nullptr) {
  std::string out;
  if (!provenance.is_null()) out += csv_provenance(provenance);
  out += "i,j,weight\n";
  for (const auto& e : g.edges()) {
    out += std::to_string(e.i + 1) + "," + std::to_string(e.j + 1) + "," + format_double(e.weight) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline json matrix_json(const Matrix& M) {
  json rows = json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j.at(0).size()) : 0;
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(j.at(i).size()) != cols) throw InputError("ragged matrix in JSON");
    for (Index k = 0; k < cols; ++k) M(i, k) = j.at(i).at(k).get<double>();
  }
  return M;
}

inline json vector_json(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// {"m", "assignment" (1-based), "nu", "converged"} plus schema_version.
inline json clustering_json(const Clustering& cl, double nu, bool converged) {
  return json{{"schema_version", kSchemaVersion},
              {"m", cl.m},
              {"assignment", cl.one_based()},
              {"nu", nu},
              {"converged", converged}};
}

inline Clustering clustering_from_json(const json& j) {
  if (!j.contains("assignment")) throw InputError("clustering JSON lacks 'assignment'");
  std::vector<int> a = j.at("assignment").get<std::vector<int>>();
  for (int& v : a) {
    if (v < 1) throw InputError("clustering ids are 1-based");
    --v;
  }
  Clustering cl = Clustering::canonical(a);
  if (j.contains("m") && j.at("m").get<int>() != cl.m) throw InputError("clustering JSON 'm' disagrees with assignment");
  return cl;
}

inline json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline std::vector<std::string> read_feature_names(const std::string& path, int d) {
  std::vector<std::string> names;
  std::istringstream is(read_file(path));
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    names.push_back(line);
  }
  while (!names.empty() && names.back().empty()) names.pop_back();
  if (static_cast<int>(names.size()) != d) {
    throw InputError(path + ": expected " + std::to_string(d) + " feature names, found " + std::to_string(names.size()));
  }
  return names;
}

// ---------------------------------------------------------------------------
// DOT

inline std::string dot_escape(std::string_view s) {
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    if (ch == '\n') {
      out += "\\n";
      continue;
    }
    out += ch;
  }
  return out;
}

inline std::string default_name(int i) { return "f" + std::to_string(i + 1); }

inline std::string member_label(const std::vector<int>& members, const std::vector<std::string>& names) {
  std::string label;
  for (std::size_t k = 0; k < members.size(); ++k) {
    if (k) label += "\\n";
    label += dot_escape(names.empty() ? default_name(members[k]) : names[members[k]]);
  }
  return label;
}

/// One node per cluster, labeled with its member covariates.
inline std::string clustering_dot(const Clustering& cl, const std::vector<std::string>& names = {},
                                  const std::vector<std::string>& comments = {}) {
  std::string out;
  for (const auto& c : comments) out += "// " + c + "\n";
  out += "graph clustering {\n  node [shape=box];\n";
  const auto members = cl.members();
  for (int k = 0; k < cl.m; ++k) {
    out += "  c" + std::to_string(k + 1) + " [label=\"" + member_label(members[k], names) + "\"];\n";
  }
  out += "}\n";
  return out;
}

/// Hierarchy across distinct clusterings ordered coarse to fine: an edge runs
/// from each cluster to the cluster of the next coarser level containing it.
inline std::string hierarchy_dot(const std::vector<std::pair<Clustering, double>>& levels,
                                 const std::vector<std::string>& names = {},
                                 const std::vector<std::string>& comments = {}) {
  std::string out;
  for (const auto& c : comments) out += "// " + c + "\n";
  out += "digraph hierarchy {\n  rankdir=TB;\n  node [shape=box];\n";
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& [cl, nu] = levels[l];
    const auto members = cl.members();
    out += "  subgraph level" + std::to_string(l) + " {\n    rank=same;\n";
    for (int k = 0; k < cl.m; ++k) {
      out += "    l" + std::to_string(l) + "_c" + std::to_string(k + 1) + " [label=\"" + member_label(members[k], names) +
             "\", tooltip=\"nu=" + format_double(nu) + "\"];\n";
    }
    out += "  }\n";
    if (l == 0) continue;
    const auto& parent = levels[l - 1].first;
    for (int k = 0; k < cl.m; ++k) {
      const int p = parent.assignment[members[k].front()];
      out += "  l" + std::to_string(l - 1) + "_c" + std::to_string(p + 1) + " -> l" + std::to_string(l) + "_c" +
             std::to_string(k + 1) + ";\n";
    }
  }
  out += "}\n";
  return out;
}

}  // namespace covclust::io
