#pragma once

// CSV ingestion, ordinal dichotomization, and JSON documents for models,
// refinement reports, simulation settings and results.

#include <cctype>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "slca/constrained.hpp"
#include "slca/core.hpp"
#include "slca/em.hpp"
#include "slca/refinement.hpp"
#include "slca/simulation.hpp"

namespace slca {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool is_missing_token(std::string_view cell) {
  return cell.empty() || cell == "NA" || cell == "na" || cell == "NaN" || cell == "." || cell == "?";
}

/// Parses rows of integer cells; row/column numbers in errors are 1-based
/// and count data rows only.
inline std::vector<std::vector<int>> read_integer_table(std::istream& in, bool has_header,
                                                        std::vector<std::string>& header) {
  std::vector<std::vector<int>> rows;
  std::string line;
  bool header_pending = has_header;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (header_pending) {
      header = std::move(cells);
      width = header.size();
      header_pending = false;
      continue;
    }
    const long row = static_cast<long>(rows.size()) + 1;
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw ParseError(ErrorKind::Parse,
                       "row has " + std::to_string(cells.size()) + " cells, expected " + std::to_string(width), row,
                       static_cast<long>(std::min(cells.size(), width) + 1));
    }
    std::vector<int> values;
    values.reserve(width);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const long col = static_cast<long>(c) + 1;
      if (is_missing_token(cells[c])) {
        throw ParseError(ErrorKind::UnsupportedMissing, "missing response", row, col);
      }
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(cells[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cells[c].size()) throw ParseError(ErrorKind::Parse, "cell is not an integer: '" + cells[c] + "'", row, col);
      values.push_back(v);
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw Error(ErrorKind::Parse, "no data rows");
  return rows;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return in;
}

}  // namespace detail

inline BinaryResponseMatrix parse_binary_csv(std::istream& in, bool has_header) {
  std::vector<std::string> header;
  const auto rows = detail::read_integer_table(in, has_header, header);
  Matrix values(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      const int v = rows[i][j];
      if (v != 0 && v != 1) {
        throw ParseError(ErrorKind::Parse, "response " + std::to_string(v) + " is not 0 or 1",
                         static_cast<long>(i + 1), static_cast<long>(j + 1));
      }
      values(static_cast<Index>(i), static_cast<Index>(j)) = v;
    }
  }
  return BinaryResponseMatrix(std::move(values), std::move(header));
}

/// Comma-separated 0/1 integers, one respondent per row. With `has_header`
/// the first row supplies item labels.
inline BinaryResponseMatrix read_binary_csv(const std::string& path, bool has_header) {
  auto in = detail::open_input(path);
  return parse_binary_csv(in, has_header);
}

struct OrdinalTable {
  std::vector<std::vector<int>> codes;  // N rows of J codes
  std::vector<std::string> labels;
};

inline OrdinalTable read_ordinal_csv(const std::string& path, bool has_header) {
  auto in = detail::open_input(path);
  OrdinalTable out;
  out.codes = detail::read_integer_table(in, has_header, out.labels);
  return out;
}

struct DichotomizeConfig {
  int n_categories = 5;
  int threshold = 4;           // Y = 1 iff code >= threshold
  std::vector<bool> reverse;   // per item; reversed code is C + 1 - code
};

/// Binary responses from ordinal codes 1..C.
inline BinaryResponseMatrix dichotomize(const std::vector<std::vector<int>>& codes, const DichotomizeConfig& config,
                                        std::vector<std::string> labels = {}) {
  const int c_max = config.n_categories;
  if (c_max < 2) throw Error(ErrorKind::Config, "need at least two categories");
  if (config.threshold < 2 || config.threshold > c_max) {
    throw Error(ErrorKind::Config, "threshold must lie in 2.." + std::to_string(c_max));
  }
  if (codes.empty() || codes.front().empty()) throw Error(ErrorKind::InvalidArgument, "empty ordinal table");
  const std::size_t width = codes.front().size();
  if (!config.reverse.empty() && config.reverse.size() != width) {
    throw Error(ErrorKind::Config, "reverse flags must list one entry per item");
  }
  Matrix values(static_cast<Index>(codes.size()), static_cast<Index>(width));
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].size() != width) {
      throw ParseError(ErrorKind::Parse, "ragged row", static_cast<long>(i + 1), static_cast<long>(codes[i].size()));
    }
    for (std::size_t j = 0; j < width; ++j) {
      int code = codes[i][j];
      if (code < 1 || code > c_max) {
        throw ParseError(ErrorKind::Parse, "code " + std::to_string(code) + " outside 1.." + std::to_string(c_max),
                         static_cast<long>(i + 1), static_cast<long>(j + 1));
      }
      if (!config.reverse.empty() && config.reverse[j]) code = c_max + 1 - code;
      values(static_cast<Index>(i), static_cast<Index>(j)) = code >= config.threshold ? 1.0 : 0.0;
    }
  }
  return BinaryResponseMatrix(std::move(values), std::move(labels));
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write to '" + path + "' failed");
}

inline std::string read_text(const std::string& path) {
  auto in = detail::open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- JSON -----------------------------------------------------------------
// Doubles are written with round-trip precision; NaN becomes null.

inline Json to_json(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

/// Row-major nested arrays.
inline Json to_json(const Matrix& m) {
  Json out = Json::array();
  for (Index r = 0; r < m.rows(); ++r) out.push_back(to_json(Vector(m.row(r).transpose())));
  return out;
}

/// Blocks of 1-based class labels in level order.
inline Json to_json(const OrderedPartition& p) {
  Json out = Json::array();
  for (const auto& block : p.blocks()) {
    Json b = Json::array();
    for (int c : block) b.push_back(c + 1);
    out.push_back(std::move(b));
  }
  return out;
}

inline OrderedPartition partition_from_json(const Json& j, int k) {
  std::vector<std::vector<int>> blocks;
  for (const auto& b : j) {
    std::vector<int> block;
    for (const auto& c : b) block.push_back(c.get<int>() - 1);
    blocks.push_back(std::move(block));
  }
  return OrderedPartition(k, std::move(blocks));
}

inline Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = j[i].is_null() ? std::nan("") : j[i].get<double>();
  return v;
}

inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw Error(ErrorKind::Parse, "matrix must be a non-empty array of rows");
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(j.front().size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != j.front().size()) throw Error(ErrorKind::Parse, "ragged matrix row", static_cast<long>(r));
    m.row(static_cast<Index>(r)) = vector_from_json(j[r]).transpose();
  }
  return m;
}

inline Json to_json(const FitDiagnostics& d) {
  return Json{{"iterations_used", d.iterations_used},
              {"converged", d.converged},
              {"reseeds", d.reseeds},
              {"start_index_selected", d.start_index_selected},
              {"start_log_likelihoods", d.start_log_likelihoods},
              {"ll_trace", d.ll_trace}};
}

inline Json to_json(const LcaModel& m, const std::vector<std::string>& item_labels = {}) {
  Json out{{"k", m.k()},
           {"n_items", m.n_items()},
           {"n_used", m.n_used},
           {"log_likelihood", m.log_likelihood},
           {"nu", to_json(m.nu)},
           {"beta", to_json(m.beta)}};
  if (!item_labels.empty()) out["item_labels"] = item_labels;
  return out;
}

inline Json model_document(const FitResult& fit, const std::vector<std::string>& item_labels) {
  Json out{{"schema_version", kSchemaVersion}, {"kind", "lca_model"}};
  out["model"] = to_json(fit.model, item_labels);
  out["diagnostics"] = to_json(fit.diagnostics);
  return out;
}

/// Reads the "model" object of a model document (or a bare model object).
inline LcaModel model_from_json(const Json& doc) {
  try {
    const Json& j = doc.contains("model") ? doc.at("model") : doc;
    LcaModel m;
    m.nu = vector_from_json(j.at("nu"));
    m.beta = matrix_from_json(j.at("beta"));
    if (j.contains("log_likelihood") && !j["log_likelihood"].is_null()) m.log_likelihood = j["log_likelihood"].get<double>();
    if (j.contains("n_used")) m.n_used = j["n_used"].get<Index>();
    if (m.beta.cols() != m.nu.size()) throw Error(ErrorKind::DimensionMismatch, "beta columns differ from nu length");
    check_proportions(m.nu, 1e-8);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed model document: ") + e.what());
  }
}

inline Json to_json(const ItemCandidate& c) {
  return Json{{"m", c.m},
              {"partition", to_json(c.partition)},
              {"beta", to_json(c.beta)},
              {"pseudo_loglik", c.pseudo_ll},
              {"levels_not_increasing", c.levels_not_increasing}};
}

inline Json to_json(const ItemRefinement& r, const std::string& label = {}) {
  Json out{{"item", r.item_index + 1}};
  if (!label.empty()) out["label"] = label;
  out["selected_m"] = r.selected_m;
  out["selected_partition"] = to_json(r.selected_partition);
  out["ebic_trace"] = r.ebic_trace;
  Json cands = Json::array();
  for (const auto& c : r.candidates) cands.push_back(to_json(c));
  out["candidates"] = std::move(cands);
  return out;
}

inline Json refinement_document(const std::vector<ItemRefinement>& refinements, const EbicConfig& config, Index n,
                                const std::vector<std::string>& labels) {
  Json items = Json::array();
  for (const auto& r : refinements) {
    items.push_back(to_json(r, labels.empty() ? std::string{} : labels[static_cast<std::size_t>(r.item_index)]));
  }
  return Json{{"schema_version", kSchemaVersion},
              {"kind", "refinement"},
              {"rho", config.rho},
              {"n", n},
              {"items", std::move(items)}};
}

inline Json to_json(const SparseLcaModel& s, const std::vector<std::string>& item_labels = {}) {
  Json partitions = Json::array();
  for (const auto& p : s.partitions) partitions.push_back(to_json(p));
  return Json{{"model", to_json(s.base, item_labels)},
              {"partitions", std::move(partitions)},
              {"free_parameter_count", s.free_parameter_count},
              {"se_nu", to_json(s.se_nu)},
              {"se_beta", to_json(s.se_beta)},
              {"diagnostics", to_json(s.diagnostics)}};
}

// ---- simulation -----------------------------------------------------------

inline Json to_json(const SimSetting& s) {
  Json out{{"name", s.name},
           {"k", s.k},
           {"j", s.j},
           {"level_spec", s.level_spec},
           {"n", s.n},
           {"rho_grid", s.rho_grid},
           {"default_rho", s.default_rho},
           {"n_replications", s.n_replications},
           {"seed", s.seed},
           {"em", Json{{"max_iterations", s.em.max_iterations},
                       {"tolerance", s.em.tolerance},
                       {"n_starts", s.em.n_starts}}}};
  out["nu_preset"] = s.nu_preset ? Json(*s.nu_preset) : Json(nullptr);
  return out;
}

/// Custom setting file. Missing fields take the defaults of SimSetting; a
/// "preset" field starts from setting1 or setting2 instead.
inline SimSetting setting_from_json(const Json& j) {
  try {
    SimSetting s;
    if (j.contains("preset")) {
      const auto name = j["preset"].get<std::string>();
      if (name == "setting1") {
        s = SimSetting::setting1();
      } else if (name == "setting2") {
        s = SimSetting::setting2();
      } else {
        throw Error(ErrorKind::Config, "unknown preset '" + name + "'");
      }
    }
    if (j.contains("name")) s.name = j["name"].get<std::string>();
    if (j.contains("k")) s.k = j["k"].get<int>();
    if (j.contains("j")) s.j = j["j"].get<int>();
    if (j.contains("level_spec")) s.level_spec = j["level_spec"].get<std::vector<int>>();
    if (j.contains("n")) s.n = j["n"].get<Index>();
    if (j.contains("rho_grid")) s.rho_grid = j["rho_grid"].get<std::vector<double>>();
    if (j.contains("default_rho")) s.default_rho = j["default_rho"].get<double>();
    if (j.contains("n_replications")) s.n_replications = j["n_replications"].get<int>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("nu_preset")) {
      if (j["nu_preset"].is_null()) {
        s.nu_preset.reset();
      } else {
        s.nu_preset = j["nu_preset"].get<std::vector<double>>();
      }
    }
    if (j.contains("em")) {
      const Json& em = j["em"];
      if (em.contains("max_iterations")) s.em.max_iterations = em["max_iterations"].get<int>();
      if (em.contains("tolerance")) s.em.tolerance = em["tolerance"].get<double>();
      if (em.contains("n_starts")) s.em.n_starts = em["n_starts"].get<int>();
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed setting: ") + e.what());
  }
}

inline Json to_json(const SelectionCounts& c) {
  return Json{{"under", c.under}, {"correct", c.correct}, {"over", c.over}};
}

inline Json to_json(const ReplicationReport& r) {
  Json out{{"rep", r.rep_index}, {"failed", r.failed}};
  if (r.failed) {
    out["error"] = r.error;
    return out;
  }
  out["em_converged"] = r.em_converged;
  out["counts"] = to_json(r.counts);
  out["mean_item_ari"] = r.mean_item_ari;
  out["mse_beta_unrestricted"] = r.mse_beta_unrestricted;
  out["mse_beta_refined"] = r.mse_beta_refined;
  out["mse_nu_unrestricted"] = r.mse_nu_unrestricted;
  out["mse_nu_refined"] = r.mse_nu_refined;
  Json per_rho = Json::array();
  for (const auto& m : r.per_rho) {
    per_rho.push_back(Json{{"rho", m.rho},
                           {"counts", to_json(m.counts)},
                           {"mean_item_ari", m.mean_item_ari},
                           {"selected_m", m.selected_m}});
  }
  out["per_rho"] = std::move(per_rho);
  return out;
}

inline Json to_json(const std::map<std::string, MetricSummary>& metrics) {
  Json out = Json::object();
  for (const auto& [name, s] : metrics) out[name] = Json{{"mean", s.mean}, {"sd", s.sd}};
  return out;
}

inline Json simulation_document(const SimulationResult& result) {
  Json truth_partitions = Json::array();
  for (const auto& p : result.truth.partitions) truth_partitions.push_back(to_json(p));
  Json reps = Json::array();
  for (const auto& r : result.replications) reps.push_back(to_json(r));
  Json per_rho = Json::array();
  for (const auto& ra : result.aggregate.per_rho) {
    per_rho.push_back(Json{{"rho", ra.rho}, {"metrics", to_json(ra.metrics)}});
  }
  return Json{{"schema_version", kSchemaVersion},
              {"kind", "simulation"},
              {"setting", to_json(result.setting)},
              {"truth", Json{{"model", to_json(result.truth.model)},
                             {"partitions", std::move(truth_partitions)},
                             {"gap_relaxed", result.truth.gap_relaxed}}},
              {"replications", std::move(reps)},
              {"aggregate", Json{{"n_succeeded", result.aggregate.n_succeeded},
                                 {"n_failed", result.aggregate.n_failed},
                                 {"at_default_rho", to_json(result.aggregate.at_default)},
                                 {"per_rho", std::move(per_rho)}}}};
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

/// One row per replication x rho. MSE columns refer to the default-rho refit
/// and repeat across a replication's rows.
inline std::string simulation_table(const SimulationResult& result) {
  std::ostringstream out;
  out << "schema_version,rep,failed,rho,under,correct,over,mean_item_ari,"
         "mse_beta_unrestricted,mse_beta_refined,mse_nu_unrestricted,mse_nu_refined\n";
  for (const auto& r : result.replications) {
    if (r.failed) {
      for (double rho : result.setting.rho_grid) {
        out << kSchemaVersion << ',' << r.rep_index << ",1," << format_double(rho) << ",NA,NA,NA,NA,NA,NA,NA,NA\n";
      }
      continue;
    }
    for (const auto& m : r.per_rho) {
      out << kSchemaVersion << ',' << r.rep_index << ",0," << format_double(m.rho) << ',' << m.counts.under << ','
          << m.counts.correct << ',' << m.counts.over << ',' << format_double(m.mean_item_ari) << ','
          << format_double(r.mse_beta_unrestricted) << ',' << format_double(r.mse_beta_refined) << ','
          << format_double(r.mse_nu_unrestricted) << ',' << format_double(r.mse_nu_refined) << '\n';
    }
  }
  return out.str();
}

}  // namespace slca
