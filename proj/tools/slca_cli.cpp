// slca: command-line front end for sparse latent class analysis.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "slca/slca.hpp"

namespace {

struct InputOptions {
  std::string path;
  bool header = false;
  int ordinal_categories = 0;  // 0: input is already binary
  int threshold = 4;
  std::vector<int> reverse_items;  // 1-based
};

struct EmOptions {
  int starts = 20;
  double tol = 1e-7;
  int max_iter = 2000;
  std::uint64_t seed = 20240601;
  int threads = 1;

  slca::EmConfig config() const {
    slca::EmConfig c;
    c.n_starts = starts;
    c.tolerance = tol;
    c.max_iterations = max_iter;
    c.seed = seed;
    c.threads = threads;
    return c;
  }
};

void add_input(CLI::App* cmd, InputOptions& in) {
  cmd->add_option("input", in.path, "CSV of responses, one respondent per row")->required();
  cmd->add_flag("--header", in.header, "first row holds item labels");
  cmd->add_option("--ordinal", in.ordinal_categories, "treat input as ordinal codes 1..C and dichotomize");
  cmd->add_option("--threshold", in.threshold, "ordinal code at or above which Y = 1")->capture_default_str();
  cmd->add_option("--reverse", in.reverse_items, "1-based items whose ordinal codes are reversed")->delimiter(',');
}

void add_em(CLI::App* cmd, EmOptions& em) {
  cmd->add_option("--seed", em.seed, "random seed")->capture_default_str();
  cmd->add_option("--starts", em.starts, "EM random starts")->capture_default_str();
  cmd->add_option("--tol", em.tol, "EM log-likelihood tolerance")->capture_default_str();
  cmd->add_option("--max-iter", em.max_iter, "EM iteration cap")->capture_default_str();
  cmd->add_option("--threads", em.threads, "worker threads")->capture_default_str();
}

slca::BinaryResponseMatrix load(const InputOptions& in) {
  if (in.ordinal_categories == 0) return slca::read_binary_csv(in.path, in.header);
  slca::OrdinalTable table = slca::read_ordinal_csv(in.path, in.header);
  slca::DichotomizeConfig cfg;
  cfg.n_categories = in.ordinal_categories;
  cfg.threshold = in.threshold;
  if (!in.reverse_items.empty()) {
    cfg.reverse.assign(table.codes.front().size(), false);
    for (int j : in.reverse_items) {
      if (j < 1 || j > static_cast<int>(cfg.reverse.size())) {
        throw slca::Error(slca::ErrorKind::Config, "reverse item " + std::to_string(j) + " out of range");
      }
      cfg.reverse[static_cast<std::size_t>(j - 1)] = true;
    }
  }
  return slca::dichotomize(table.codes, cfg, std::move(table.labels));
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
  } else {
    slca::write_text(out, text);
  }
}

std::string dump(const slca::Json& doc) { return doc.dump(2) + "\n"; }

int exit_code(slca::ErrorKind kind) {
  switch (kind) {
    case slca::ErrorKind::Numerical:
    case slca::ErrorKind::DegenerateBlock:
    case slca::ErrorKind::SingularInformation:
      return 3;
    case slca::ErrorKind::Config:
      return 4;
    default:
      return 2;
  }
}

slca::SimSetting resolve_setting(const std::string& name) {
  if (name == "setting1") return slca::SimSetting::setting1();
  if (name == "setting2") return slca::SimSetting::setting2();
  const std::string prefix = "custom:";
  if (name.rfind(prefix, 0) == 0) {
    slca::Json j;
    try {
      j = slca::Json::parse(slca::read_text(name.substr(prefix.size())));
    } catch (const nlohmann::json::parse_error& e) {
      throw slca::Error(slca::ErrorKind::Config, std::string("setting file: ") + e.what());
    }
    return slca::setting_from_json(j);
  }
  throw slca::Error(slca::ErrorKind::Config, "unknown setting '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse latent class analysis with item-level level-count refinement"};
  app.require_subcommand(1);

  InputOptions in;
  EmOptions em;
  std::string out;
  int k = 0;
  int k_min = 1;
  int k_max = 6;
  double rho = 20.0;

  auto* select_k = app.add_subcommand("select-k", "choose the number of classes by BIC");
  add_input(select_k, in);
  add_em(select_k, em);
  select_k->add_option("--k-min", k_min)->capture_default_str();
  select_k->add_option("--k-max", k_max)->capture_default_str();
  select_k->add_option("--out", out, "output file (default stdout)");

  auto* fit = app.add_subcommand("fit", "unrestricted EM fit with K classes");
  add_input(fit, in);
  add_em(fit, em);
  fit->add_option("-k,--classes", k, "number of classes")->required();
  fit->add_option("--out", out, "output file (default stdout)");

  std::string model_path;
  auto* refine = app.add_subcommand("refine", "select item level structures from a fitted model");
  add_input(refine, in);
  refine->add_option("--model", model_path, "model document written by 'fit'")->required();
  refine->add_option("--rho", rho, "EBIC sparsity constant")->capture_default_str();
  refine->add_option("--out", out, "output file (default stdout)");

  std::string heatmap_out;
  auto* pipeline = app.add_subcommand("pipeline", "select K, fit, refine, refit and report");
  add_input(pipeline, in);
  add_em(pipeline, em);
  pipeline->add_option("-k,--classes", k, "fix the number of classes instead of selecting it");
  pipeline->add_option("--k-min", k_min)->capture_default_str();
  pipeline->add_option("--k-max", k_max)->capture_default_str();
  pipeline->add_option("--rho", rho, "EBIC sparsity constant")->capture_default_str();
  pipeline->add_option("--out", out, "output file (default stdout)");
  pipeline->add_option("--heatmap", heatmap_out, "also write long-format heatmap data here");

  std::string setting_name = "setting1";
  std::optional<long> sim_n;
  std::optional<int> reps;
  std::vector<double> rho_grid;
  std::optional<std::uint64_t> sim_seed;
  std::string table_out;
  int workers = 1;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on a preset or custom setting");
  simulate->add_option("--setting", setting_name, "setting1 | setting2 | custom:<file>")->capture_default_str();
  simulate->add_option("--n", sim_n, "sample size per replication");
  simulate->add_option("--reps", reps, "number of replications");
  simulate->add_option("--rho-grid", rho_grid, "comma-separated rho values")->delimiter(',');
  simulate->add_option("--rho", rho, "rho for the constrained refit")->capture_default_str();
  simulate->add_option("--seed", sim_seed, "setting seed");
  simulate->add_option("--starts", em.starts, "EM random starts")->capture_default_str();
  simulate->add_option("--workers", workers, "parallel replications")->capture_default_str();
  simulate->add_option("--out", out, "JSON report (default stdout)");
  simulate->add_option("--table", table_out, "flat CSV table, one row per replication and rho");

  std::string pipeline_doc;
  auto* heatmap = app.add_subcommand("heatmap", "long-format heatmap data from a pipeline document");
  heatmap->add_option("document", pipeline_doc, "document written by 'pipeline'")->required();
  heatmap->add_option("--out", out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 4;
  }

  try {
    if (*select_k) {
      const auto data = load(in);
      const auto sel = slca::select_num_classes(data, k_min, k_max, em.config());
      slca::Json trace = slca::Json::array();
      for (const auto& [kk, v] : sel.bic_trace) trace.push_back({{"k", kk}, {"bic", v}});
      emit(out, dump({{"schema_version", slca::kSchemaVersion},
                      {"kind", "class_selection"},
                      {"selected_k", sel.selected_k},
                      {"bic_trace", trace}}));
    } else if (*fit) {
      const auto data = load(in);
      emit(out, dump(slca::model_document(slca::em_fit(data, k, em.config()), data.item_labels())));
    } else if (*refine) {
      const auto data = load(in);
      slca::Json doc;
      try {
        doc = slca::Json::parse(slca::read_text(model_path));
      } catch (const nlohmann::json::parse_error& e) {
        throw slca::Error(slca::ErrorKind::Parse, std::string("model document: ") + e.what());
      }
      const slca::LcaModel model = slca::model_from_json(doc);
      const slca::EbicConfig ebic{rho};
      const auto post = slca::posterior(data, model);
      const auto refined = slca::refine_items(data, post, model.beta, ebic);
      emit(out, dump(slca::refinement_document(refined, ebic, data.n_respondents(), data.item_labels())));
    } else if (*pipeline) {
      const auto data = load(in);
      slca::PipelineConfig cfg;
      if (k > 0) cfg.k = k;
      cfg.k_min = k_min;
      cfg.k_max = k_max;
      cfg.ebic.rho = rho;
      cfg.em = em.config();
      try {
        const auto result = slca::run_pipeline(data, cfg);
        emit(out, dump(slca::pipeline_document(result)));
        if (!heatmap_out.empty()) slca::emit_heatmap_data(result, heatmap_out);
      } catch (const slca::PipelineError& e) {
        std::cerr << "partial state:\n" << e.partial().dump(2) << "\n";
        throw;
      }
    } else if (*simulate) {
      slca::SimSetting s = resolve_setting(setting_name);
      if (sim_n) s.n = *sim_n;
      if (reps) s.n_replications = *reps;
      if (!rho_grid.empty()) s.rho_grid = rho_grid;
      if (sim_seed) s.seed = *sim_seed;
      s.default_rho = rho;
      s.em.n_starts = em.starts;
      const auto result = slca::run_simulation(s, workers);
      emit(out, dump(slca::simulation_document(result)));
      if (!table_out.empty()) slca::write_text(table_out, slca::simulation_table(result));
    } else if (*heatmap) {
      slca::Json doc;
      try {
        doc = slca::Json::parse(slca::read_text(pipeline_doc));
      } catch (const nlohmann::json::parse_error& e) {
        throw slca::Error(slca::ErrorKind::Parse, std::string("pipeline document: ") + e.what());
      }
      if (!doc.contains("final")) throw slca::Error(slca::ErrorKind::Parse, "document has no final model");
      slca::PipelineOutput result;
      result.final_model.base = slca::model_from_json(doc["final"]);
      const auto& labels = doc["final"]["model"];
      if (labels.contains("item_labels")) {
        result.item_labels = labels["item_labels"].get<std::vector<std::string>>();
      } else {
        for (slca::Index j = 0; j < result.final_model.base.n_items(); ++j) {
          result.item_labels.push_back("item" + std::to_string(j + 1));
        }
      }
      result.class_order = slca::class_presentation_order(result.final_model.base.beta);
      result.item_clusters = slca::average_linkage(result.final_model.base.beta);
      emit(out, slca::heatmap_table(result));
    }
  } catch (const slca::Error& e) {
    std::cerr << "slca: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "slca: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
