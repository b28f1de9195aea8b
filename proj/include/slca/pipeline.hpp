#pragma once

// End-to-end analysis: class-count selection, unrestricted fit, item
// refinement, constrained refit with standard errors, and the presentation
// orderings used for heatmaps.

#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "slca/constrained.hpp"
#include "slca/em.hpp"
#include "slca/io.hpp"
#include "slca/refinement.hpp"

namespace slca {

struct PipelineConfig {
  std::optional<int> k;  // fixed class count; otherwise selected by BIC
  int k_min = 1;
  int k_max = 6;
  EbicConfig ebic;
  EmConfig em;
};

/// Average-linkage agglomerative clustering result.
struct Dendrogram {
  struct Merge {
    std::vector<int> left;   // leaves, in leaf order
    std::vector<int> right;
    double height = 0.0;
  };
  std::vector<Merge> merges;
  std::vector<int> leaf_order;
};

/// Average linkage on Euclidean distance between rows. At each step the
/// closest pair of active clusters merges (ties: first pair in active-list
/// order); the merged cluster replaces the earlier one and lists its leaves
/// before the later one's.
inline Dendrogram average_linkage(const Matrix& rows) {
  const Index n = rows.rows();
  Dendrogram out;
  if (n == 0) return out;
  std::vector<std::vector<int>> members(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) members[static_cast<std::size_t>(i)] = {static_cast<int>(i)};
  Matrix d(n, n);
  for (Index a = 0; a < n; ++a) {
    for (Index b = 0; b < n; ++b) d(a, b) = (rows.row(a) - rows.row(b)).norm();
  }
  std::vector<Index> active(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) active[static_cast<std::size_t>(i)] = i;
  while (active.size() > 1) {
    std::size_t best_a = 0;
    std::size_t best_b = 1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < active.size(); ++a) {
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        const double v = d(active[a], active[b]);
        if (v < best) {
          best = v;
          best_a = a;
          best_b = b;
        }
      }
    }
    const Index ia = active[best_a];
    const Index ib = active[best_b];
    auto& ma = members[static_cast<std::size_t>(ia)];
    auto& mb = members[static_cast<std::size_t>(ib)];
    const auto na = static_cast<double>(ma.size());
    const auto nb = static_cast<double>(mb.size());
    for (Index c : active) {
      if (c == ia || c == ib) continue;
      const double v = (na * d(ia, c) + nb * d(ib, c)) / (na + nb);
      d(ia, c) = v;
      d(c, ia) = v;
    }
    out.merges.push_back({ma, mb, best});
    ma.insert(ma.end(), mb.begin(), mb.end());
    mb.clear();
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_b));
  }
  out.leaf_order = members[static_cast<std::size_t>(active.front())];
  return out;
}

/// Classes by ascending average probability over items (stable on ties).
inline std::vector<int> class_presentation_order(const Matrix& beta) {
  const Eigen::RowVectorXd mean = beta.colwise().mean();
  std::vector<int> order(static_cast<std::size_t>(beta.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mean[a] < mean[b]; });
  return order;
}

struct PipelineOutput {
  std::vector<std::pair<int, double>> bic_trace;  // empty when K was fixed
  FitResult unrestricted;
  std::vector<ItemRefinement> refinement;
  SparseLcaModel final_model;
  std::vector<int> class_order;  // class_order[p] = fitted class shown at position p
  Dendrogram item_clusters;      // over rows of the final beta
  std::vector<std::string> item_labels;
  EbicConfig ebic;
  Index n = 0;
};

/// Raised when a pipeline stage fails; carries the stage name and the
/// document built so far.
class PipelineError : public Error {
 public:
  PipelineError(const Error& cause, std::string stage, Json partial)
      : Error(cause.kind(), "stage '" + stage + "' failed: " + cause.what(), cause.index()),
        stage_(std::move(stage)),
        partial_(std::move(partial)) {}

  const std::string& stage() const noexcept { return stage_; }
  const Json& partial() const noexcept { return partial_; }

 private:
  std::string stage_;
  Json partial_;
};

inline Json pipeline_document(const PipelineOutput& out, const std::string& completed_through = "presentation") {
  Json doc{{"schema_version", kSchemaVersion}, {"kind", "pipeline"}, {"completed_through", completed_through}};
  doc["n"] = out.n;
  doc["rho"] = out.ebic.rho;
  if (!out.bic_trace.empty()) {
    Json trace = Json::array();
    for (const auto& [k, v] : out.bic_trace) trace.push_back(Json{{"k", k}, {"bic", v}});
    doc["bic_trace"] = std::move(trace);
  }
  if (out.unrestricted.model.k() > 0) {
    doc["unrestricted"] = Json{{"model", to_json(out.unrestricted.model, out.item_labels)},
                               {"diagnostics", to_json(out.unrestricted.diagnostics)}};
  }
  if (!out.refinement.empty()) {
    doc["refinement"] = refinement_document(out.refinement, out.ebic, out.n, out.item_labels)["items"];
  }
  if (out.final_model.base.k() > 0) doc["final"] = to_json(out.final_model, out.item_labels);
  if (!out.class_order.empty()) {
    Json order = Json::array();
    for (int c : out.class_order) order.push_back(c + 1);
    doc["class_order"] = std::move(order);
    Json leaves = Json::array();
    for (int j : out.item_clusters.leaf_order) leaves.push_back(j + 1);
    doc["item_order"] = std::move(leaves);
  }
  return doc;
}

inline PipelineOutput run_pipeline(const BinaryResponseMatrix& data, const PipelineConfig& config) {
  PipelineOutput out;
  out.item_labels = data.item_labels();
  out.ebic = config.ebic;
  out.n = data.n_respondents();
  std::string stage = "config";
  std::string done = "none";
  try {
    config.em.validate();
    config.ebic.validate();

    stage = "select_k";
    int k = 0;
    if (config.k) {
      k = *config.k;
    } else {
      ClassCountSelection sel = select_num_classes(data, config.k_min, config.k_max, config.em);
      out.bic_trace = sel.bic_trace;
      k = sel.selected_k;
    }
    done = stage;

    stage = "em_fit";
    out.unrestricted = em_fit(data, k, config.em);
    done = stage;

    stage = "refine";
    const PosteriorMatrix post = posterior(data, out.unrestricted.model, config.em.clamp_epsilon);
    out.refinement = refine_items(data, post, out.unrestricted.model.beta, config.ebic, config.em.clamp_epsilon,
                                  config.em.threads);
    done = stage;

    stage = "constrained_em";
    std::vector<OrderedPartition> partitions;
    LcaModel init = out.unrestricted.model;
    for (const auto& r : out.refinement) {
      partitions.push_back(r.selected_partition);
      init.beta.row(r.item_index) = r.selected().beta.transpose();
    }
    out.final_model = constrained_em(data, partitions, init, config.em);
    done = stage;

    stage = "standard_errors";
    out.final_model = standard_errors(data, out.final_model, config.em.clamp_epsilon);
    done = stage;

    stage = "presentation";
    out.class_order = class_presentation_order(out.final_model.base.beta);
    out.item_clusters = average_linkage(out.final_model.base.beta);
  } catch (const Error& e) {
    throw PipelineError(e, stage, pipeline_document(out, done));
  }
  return out;
}

/// Long-format heatmap rows: item_label, class_label, value,
/// item_cluster_position, class_position (positions 1-based).
inline std::string heatmap_table(const PipelineOutput& out) {
  std::ostringstream ss;
  ss << "item_label,class_label,value,item_cluster_position,class_position\n";
  const Matrix& beta = out.final_model.base.beta;
  for (std::size_t ip = 0; ip < out.item_clusters.leaf_order.size(); ++ip) {
    const int j = out.item_clusters.leaf_order[ip];
    for (std::size_t cp = 0; cp < out.class_order.size(); ++cp) {
      const int c = out.class_order[cp];
      ss << out.item_labels[static_cast<std::size_t>(j)] << ",class" << (c + 1) << ','
         << format_double(beta(j, c)) << ',' << (ip + 1) << ',' << (cp + 1) << '\n';
    }
  }
  return ss.str();
}

inline void emit_heatmap_data(const PipelineOutput& out, const std::string& path) {
  write_text(path, heatmap_table(out));
}

}  // namespace slca
