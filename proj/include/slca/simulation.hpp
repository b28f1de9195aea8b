#pragma once

// Monte Carlo harness: true-parameter generation for the two benchmark
// settings, data sampling, partition and estimation metrics, and the
// per-replication runner with a deterministic aggregate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "slca/constrained.hpp"
#include "slca/core.hpp"
#include "slca/em.hpp"
#include "slca/refinement.hpp"
#include "slca/rng.hpp"

namespace slca {

struct SimSetting {
  std::string name = "custom";
  int k = 0;
  int j = 0;
  std::vector<int> level_spec;  // true level count per item
  Index n = 1000;
  std::vector<double> rho_grid{1, 5, 10, 20, 40, 80, 160, 320};
  double default_rho = 20.0;  // rho used for the constrained refit
  int n_replications = 100;
  std::uint64_t seed = 1;
  std::optional<std::vector<double>> nu_preset;
  EmConfig em;

  void validate() const {
    if (k < 1 || j < 1) throw Error(ErrorKind::Config, "setting needs k >= 1 and j >= 1");
    if (static_cast<int>(level_spec.size()) != j) {
      throw Error(ErrorKind::Config, "level_spec must list one level count per item");
    }
    for (std::size_t i = 0; i < level_spec.size(); ++i) {
      if (level_spec[i] < 1 || level_spec[i] > k) {
        throw Error(ErrorKind::Config, "level count outside 1..K for item " + std::to_string(i + 1));
      }
    }
    if (n < 1) throw Error(ErrorKind::Config, "sample size must be >= 1");
    if (n_replications < 1) throw Error(ErrorKind::Config, "need at least one replication");
    if (rho_grid.empty()) throw Error(ErrorKind::Config, "rho grid is empty");
    for (double r : rho_grid) {
      if (!(r >= 1.0)) throw Error(ErrorKind::Config, "rho values must be >= 1");
    }
    if (!(default_rho >= 1.0)) throw Error(ErrorKind::Config, "default rho must be >= 1");
    if (nu_preset) {
      if (static_cast<int>(nu_preset->size()) != k) throw Error(ErrorKind::Config, "nu preset length differs from K");
      check_proportions(Eigen::Map<const Vector>(nu_preset->data(), k), 1e-9);
    }
    em.validate();
  }

  /// K = 4, J = 32, every item with two levels.
  static SimSetting setting1() {
    SimSetting s;
    s.name = "setting1";
    s.k = 4;
    s.j = 32;
    s.level_spec.assign(32, 2);
    s.nu_preset = std::vector<double>{0.241, 0.259, 0.202, 0.298};
    s.seed = 0x5E771;
    return s;
  }

  /// K = 8, J = 64: 48 two-level items followed by 16 three-level items.
  static SimSetting setting2() {
    SimSetting s;
    s.name = "setting2";
    s.k = 8;
    s.j = 64;
    s.level_spec.assign(48, 2);
    s.level_spec.insert(s.level_spec.end(), 16, 3);
    std::vector<double> nu{0.106, 0.137, 0.130, 0.101, 0.124, 0.117, 0.150, 0.136};
    const double total = std::accumulate(nu.begin(), nu.end(), 0.0);  // printed values sum to 1.001
    for (double& v : nu) v /= total;
    s.nu_preset = std::move(nu);
    s.seed = 0x5E772;
    return s;
  }
};

struct TrueParameters {
  LcaModel model;
  std::vector<OrderedPartition> partitions;
  bool gap_relaxed = false;
};

inline constexpr double kLevelLow = 0.1;
inline constexpr double kLevelHigh = 0.9;
inline constexpr double kLevelGap = 0.25;
inline constexpr double kRelaxedLevelGap = 0.15;

/// Draws nu (or takes the preset) and, for each item, m distinct levels in
/// [0.1, 0.9] with pairwise gaps >= 0.25 (0.15 when 0.25 cannot fit), then a
/// random surjective assignment of classes to levels.
inline TrueParameters generate_true_params(const SimSetting& setting, std::uint64_t seed) {
  setting.validate();
  Rng rng(seed);
  TrueParameters out;
  const int k = setting.k;
  out.model.nu.resize(k);
  if (setting.nu_preset) {
    for (int c = 0; c < k; ++c) out.model.nu[c] = (*setting.nu_preset)[static_cast<std::size_t>(c)];
  } else {
    for (int c = 0; c < k; ++c) out.model.nu[c] = rng.uniform(0.8, 1.2);
    out.model.nu /= out.model.nu.sum();
  }
  out.model.beta.resize(setting.j, k);
  const double span = kLevelHigh - kLevelLow;
  for (int j = 0; j < setting.j; ++j) {
    const int m = setting.level_spec[static_cast<std::size_t>(j)];
    double gap = kLevelGap;
    if ((m - 1) * gap > span) {
      gap = kRelaxedLevelGap;
      out.gap_relaxed = true;
    }
    if ((m - 1) * gap > span) gap = span / (m - 1);
    // Uniform draw from {sorted x : x_{i+1} - x_i >= gap} via the shifted order statistics.
    std::vector<double> levels(static_cast<std::size_t>(m));
    const double free_span = std::max(0.0, span - (m - 1) * gap);
    for (auto& v : levels) v = rng.uniform() * free_span;
    std::sort(levels.begin(), levels.end());
    for (int i = 0; i < m; ++i) levels[static_cast<std::size_t>(i)] += kLevelLow + i * gap;

    std::vector<int> classes(static_cast<std::size_t>(k));
    std::iota(classes.begin(), classes.end(), 0);
    rng.shuffle(classes.begin(), classes.end());
    std::vector<int> level_of(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      const int level = i < m ? i : static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
      level_of[static_cast<std::size_t>(classes[static_cast<std::size_t>(i)])] = level;
    }
    std::vector<double> row(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
      row[static_cast<std::size_t>(c)] = levels[static_cast<std::size_t>(level_of[static_cast<std::size_t>(c)])];
      out.model.beta(j, c) = row[static_cast<std::size_t>(c)];
    }
    out.partitions.push_back(OrderedPartition::from_levels(row));
  }
  return out;
}

/// xi_i ~ Categorical(nu), then Y_ij ~ Bernoulli(beta_{j, xi_i}).
inline BinaryResponseMatrix sample_dataset(const LcaModel& truth, Index n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "sample size must be >= 1");
  Rng rng(seed);
  const std::vector<double> nu(truth.nu.data(), truth.nu.data() + truth.nu.size());
  Matrix y(n, truth.n_items());
  for (Index i = 0; i < n; ++i) {
    const int c = rng.categorical(nu);
    for (Index j = 0; j < truth.n_items(); ++j) y(i, j) = rng.bernoulli(truth.beta(j, c)) ? 1.0 : 0.0;
  }
  return BinaryResponseMatrix(std::move(y));
}

/// Hubert-Arabie adjusted Rand index over the K class labels. Degenerate
/// denominators (both partitions trivial, or K = 1) give 1.
inline double adjusted_rand_index(const OrderedPartition& a, const OrderedPartition& b) {
  if (a.k() != b.k()) throw Error(ErrorKind::InvalidArgument, "partitions cover different class counts");
  const auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };
  const auto la = a.labels();
  const auto lb = b.labels();
  std::vector<std::vector<double>> table(static_cast<std::size_t>(a.size()),
                                         std::vector<double>(static_cast<std::size_t>(b.size()), 0.0));
  for (std::size_t c = 0; c < la.size(); ++c) {
    table[static_cast<std::size_t>(la[c])][static_cast<std::size_t>(lb[c])] += 1.0;
  }
  double index = 0.0;
  for (const auto& row : table) {
    for (double v : row) index += choose2(v);
  }
  double rows = 0.0;
  for (const auto& block : a.blocks()) rows += choose2(static_cast<double>(block.size()));
  double cols = 0.0;
  for (const auto& block : b.blocks()) cols += choose2(static_cast<double>(block.size()));
  const double pairs = choose2(static_cast<double>(a.k()));
  if (pairs == 0.0) return 1.0;
  const double expected = rows * cols / pairs;
  const double max_index = 0.5 * (rows + cols);
  const double denom = max_index - expected;
  if (denom == 0.0) return 1.0;
  return (index - expected) / denom;
}

struct Alignment {
  double mse = 0.0;
  std::vector<int> perm;  // perm[k] = estimated class matched to true class k
};

namespace detail {

/// cost(t, e) = sum_j (est(j, e) - truth(j, t))^2
inline Matrix column_cost(const Matrix& estimate, const Matrix& truth) {
  const Index k = truth.cols();
  Matrix cost(k, k);
  for (Index t = 0; t < k; ++t) {
    for (Index e = 0; e < k; ++e) cost(t, e) = (estimate.col(e) - truth.col(t)).squaredNorm();
  }
  return cost;
}

inline double aligned_mse(const Matrix& estimate, const Matrix& truth, const std::vector<int>& perm) {
  double total = 0.0;
  for (Index t = 0; t < truth.cols(); ++t) {
    total += (estimate.col(perm[static_cast<std::size_t>(t)]) - truth.col(t)).squaredNorm();
  }
  return total / static_cast<double>(truth.size());
}

inline void check_same_shape(const Matrix& estimate, const Matrix& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "estimate and truth differ in shape");
  }
}

}  // namespace detail

/// Minimum-cost perfect matching (rows to columns) of a square cost matrix,
/// O(K^3) shortest augmenting paths with potentials.
inline std::vector<int> solve_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index row = 1; row <= n; ++row) {
    match[0] = row;
    Index col0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(col0)] = 1;
      const Index row0 = match[static_cast<std::size_t>(col0)];
      double delta = inf;
      Index col1 = 0;
      for (Index col = 1; col <= n; ++col) {
        const auto c = static_cast<std::size_t>(col);
        if (used[c]) continue;
        const double cur = cost(row0 - 1, col - 1) - u[static_cast<std::size_t>(row0)] - v[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = col;
        }
      }
      for (Index col = 0; col <= n; ++col) {
        const auto c = static_cast<std::size_t>(col);
        if (used[c]) {
          u[static_cast<std::size_t>(match[c])] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[static_cast<std::size_t>(col0)] != 0);
    do {
      const Index col1 = way[static_cast<std::size_t>(col0)];
      match[static_cast<std::size_t>(col0)] = match[static_cast<std::size_t>(col1)];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (Index col = 1; col <= n; ++col) {
    perm[static_cast<std::size_t>(match[static_cast<std::size_t>(col)] - 1)] = static_cast<int>(col - 1);
  }
  return perm;
}

inline Alignment align_brute_force(const Matrix& estimate, const Matrix& truth) {
  detail::check_same_shape(estimate, truth);
  const Matrix cost = detail::column_cost(estimate, truth);
  std::vector<int> perm(static_cast<std::size_t>(truth.cols()));
  std::iota(perm.begin(), perm.end(), 0);
  Alignment best;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t t = 0; t < perm.size(); ++t) c += cost(static_cast<Index>(t), perm[t]);
    if (c < best_cost) {
      best_cost = c;
      best.perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  best.mse = detail::aligned_mse(estimate, truth, best.perm);
  return best;
}

inline Alignment align_assignment(const Matrix& estimate, const Matrix& truth) {
  detail::check_same_shape(estimate, truth);
  Alignment out;
  out.perm = solve_assignment(detail::column_cost(estimate, truth));
  out.mse = detail::aligned_mse(estimate, truth, out.perm);
  return out;
}

inline constexpr Index kBruteForceMaxClasses = 8;

/// (1/JK) min over class permutations of the squared error, with the
/// minimizing permutation.
inline Alignment mse_beta_aligned(const Matrix& estimate, const Matrix& truth) {
  return truth.cols() <= kBruteForceMaxClasses ? align_brute_force(estimate, truth)
                                               : align_assignment(estimate, truth);
}

inline double mse_nu_aligned(const Vector& estimate, const Vector& truth, const std::vector<int>& perm) {
  if (estimate.size() != truth.size() || static_cast<Index>(perm.size()) != truth.size()) {
    throw Error(ErrorKind::DimensionMismatch, "proportions and permutation differ in length");
  }
  double total = 0.0;
  for (Index k = 0; k < truth.size(); ++k) {
    const double d = estimate[perm[static_cast<std::size_t>(k)]] - truth[k];
    total += d * d;
  }
  return total / static_cast<double>(truth.size());
}

struct SelectionCounts {
  int under = 0;
  int correct = 0;
  int over = 0;

  friend bool operator==(const SelectionCounts&, const SelectionCounts&) = default;
};

inline SelectionCounts selection_counts(const std::vector<int>& selected, const std::vector<int>& truth) {
  if (selected.size() != truth.size()) throw Error(ErrorKind::DimensionMismatch, "selection lengths differ");
  SelectionCounts out;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    if (selected[j] < truth[j]) {
      ++out.under;
    } else if (selected[j] > truth[j]) {
      ++out.over;
    }
  }
  out.correct = static_cast<int>(truth.size()) - out.under - out.over;
  return out;
}

struct RhoMetrics {
  double rho = 0.0;
  SelectionCounts counts;
  double mean_item_ari = 0.0;
  std::vector<int> selected_m;
};

struct ReplicationReport {
  int rep_index = 0;
  bool failed = false;
  std::string error;
  bool em_converged = false;
  // At the setting's default rho.
  SelectionCounts counts;
  double mean_item_ari = 0.0;
  double mse_beta_unrestricted = 0.0;
  double mse_beta_refined = 0.0;
  double mse_nu_unrestricted = 0.0;
  double mse_nu_refined = 0.0;
  std::vector<RhoMetrics> per_rho;  // in rho_grid order
};

namespace detail {

inline RhoMetrics score_selection(double rho, const std::vector<ItemRefinement>& refinements,
                                  const TrueParameters& truth, const std::vector<int>& est_to_true) {
  RhoMetrics out;
  out.rho = rho;
  double ari = 0.0;
  for (std::size_t j = 0; j < refinements.size(); ++j) {
    out.selected_m.push_back(refinements[j].selected_m);
    ari += adjusted_rand_index(truth.partitions[j], refinements[j].selected_partition.relabeled(est_to_true));
  }
  std::vector<int> truth_m;
  for (const auto& p : truth.partitions) truth_m.push_back(p.size());
  out.counts = selection_counts(out.selected_m, truth_m);
  out.mean_item_ari = ari / static_cast<double>(refinements.size());
  return out;
}

}  // namespace detail

/// One replication against fixed true parameters. Each rho reuses the same
/// unrestricted fit and candidate paths; the constrained refit uses the
/// setting's default rho. Stage errors mark the replication failed.
inline ReplicationReport run_replication(const SimSetting& setting, const TrueParameters& truth, int rep_index) {
  ReplicationReport report;
  report.rep_index = rep_index;
  try {
    const auto rep = static_cast<std::uint64_t>(rep_index);
    const BinaryResponseMatrix data =
        sample_dataset(truth.model, setting.n, derive_seed(setting.seed, static_cast<std::uint64_t>(Stream::Data), rep));
    EmConfig em = setting.em;
    em.seed = derive_seed(setting.seed, static_cast<std::uint64_t>(Stream::EmStarts), rep);
    const FitResult fit = em_fit(data, setting.k, em);
    report.em_converged = fit.diagnostics.converged;
    const PosteriorMatrix post = posterior(data, fit.model, em.clamp_epsilon);

    std::vector<std::vector<ItemCandidate>> paths;
    for (Index j = 0; j < data.n_items(); ++j) {
      paths.push_back(stepwise_search(item_statistics(data.item(j), post), fit.model.beta.row(j).transpose(),
                                      em.clamp_epsilon));
    }

    const Alignment unrestricted = mse_beta_aligned(fit.model.beta, truth.model.beta);
    report.mse_beta_unrestricted = unrestricted.mse;
    report.mse_nu_unrestricted = mse_nu_aligned(fit.model.nu, truth.model.nu, unrestricted.perm);
    std::vector<int> est_to_true(unrestricted.perm.size());
    for (std::size_t t = 0; t < unrestricted.perm.size(); ++t) {
      est_to_true[static_cast<std::size_t>(unrestricted.perm[t])] = static_cast<int>(t);
    }

    const auto select_all = [&](double rho) {
      std::vector<ItemRefinement> out;
      for (std::size_t j = 0; j < paths.size(); ++j) {
        out.push_back(select_levels(static_cast<int>(j), paths[j], data.n_respondents(), EbicConfig{rho}));
      }
      return out;
    };
    for (double rho : setting.rho_grid) {
      report.per_rho.push_back(detail::score_selection(rho, select_all(rho), truth, est_to_true));
    }

    const std::vector<ItemRefinement> chosen = select_all(setting.default_rho);
    const RhoMetrics at_default = detail::score_selection(setting.default_rho, chosen, truth, est_to_true);
    report.counts = at_default.counts;
    report.mean_item_ari = at_default.mean_item_ari;

    std::vector<OrderedPartition> partitions;
    LcaModel init = fit.model;
    for (const auto& r : chosen) {
      partitions.push_back(r.selected_partition);
      init.beta.row(r.item_index) = r.selected().beta.transpose();
    }
    const SparseLcaModel refined = constrained_em(data, partitions, init, em);
    const Alignment refined_alignment = mse_beta_aligned(refined.base.beta, truth.model.beta);
    report.mse_beta_refined = refined_alignment.mse;
    report.mse_nu_refined = mse_nu_aligned(refined.base.nu, truth.model.nu, refined_alignment.perm);
  } catch (const std::exception& e) {
    report.failed = true;
    report.error = e.what();
  }
  return report;
}

inline TrueParameters setting_truth(const SimSetting& setting) {
  return generate_true_params(setting, derive_seed(setting.seed, static_cast<std::uint64_t>(Stream::Truth)));
}

inline ReplicationReport run_replication(const SimSetting& setting, int rep_index) {
  return run_replication(setting, setting_truth(setting), rep_index);
}

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;
};

struct RhoAggregate {
  double rho = 0.0;
  std::map<std::string, MetricSummary> metrics;  // under, correct, over, mean_item_ari
};

struct SimulationAggregate {
  int n_succeeded = 0;
  int n_failed = 0;
  std::map<std::string, MetricSummary> at_default;  // includes the MSE metrics
  std::vector<RhoAggregate> per_rho;
};

struct SimulationResult {
  SimSetting setting;
  TrueParameters truth;
  std::vector<ReplicationReport> replications;
  SimulationAggregate aggregate;
};

namespace detail {

inline MetricSummary summarize(const std::vector<double>& xs) {
  MetricSummary s;
  if (xs.empty()) {
    s.mean = s.sd = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace detail

/// Folds replication reports in rep_index order; failed replications are
/// counted but excluded from the means.
inline SimulationAggregate aggregate_reports(const SimSetting& setting, const std::vector<ReplicationReport>& reps) {
  SimulationAggregate agg;
  std::map<std::string, std::vector<double>> at_default;
  std::vector<std::map<std::string, std::vector<double>>> per_rho(setting.rho_grid.size());
  for (const auto& r : reps) {
    if (r.failed) {
      ++agg.n_failed;
      continue;
    }
    ++agg.n_succeeded;
    at_default["under"].push_back(r.counts.under);
    at_default["correct"].push_back(r.counts.correct);
    at_default["over"].push_back(r.counts.over);
    at_default["mean_item_ari"].push_back(r.mean_item_ari);
    at_default["mse_beta_unrestricted"].push_back(r.mse_beta_unrestricted);
    at_default["mse_beta_refined"].push_back(r.mse_beta_refined);
    at_default["mse_nu_unrestricted"].push_back(r.mse_nu_unrestricted);
    at_default["mse_nu_refined"].push_back(r.mse_nu_refined);
    for (std::size_t i = 0; i < r.per_rho.size(); ++i) {
      per_rho[i]["under"].push_back(r.per_rho[i].counts.under);
      per_rho[i]["correct"].push_back(r.per_rho[i].counts.correct);
      per_rho[i]["over"].push_back(r.per_rho[i].counts.over);
      per_rho[i]["mean_item_ari"].push_back(r.per_rho[i].mean_item_ari);
    }
  }
  for (const auto& [name, xs] : at_default) agg.at_default[name] = detail::summarize(xs);
  for (std::size_t i = 0; i < setting.rho_grid.size(); ++i) {
    RhoAggregate ra;
    ra.rho = setting.rho_grid[i];
    for (const auto& [name, xs] : per_rho[i]) ra.metrics[name] = detail::summarize(xs);
    agg.per_rho.push_back(std::move(ra));
  }
  return agg;
}

/// Runs all replications (on `workers` threads; results do not depend on it).
inline SimulationResult run_simulation(const SimSetting& setting, int workers = 1) {
  setting.validate();
  SimulationResult out;
  out.setting = setting;
  out.truth = setting_truth(setting);
  out.replications.resize(static_cast<std::size_t>(setting.n_replications));
  detail::parallel_for(setting.n_replications, workers, [&](int rep) {
    out.replications[static_cast<std::size_t>(rep)] = run_replication(setting, out.truth, rep);
  });
  out.aggregate = aggregate_reports(setting, out.replications);
  return out;
}

}  // namespace slca
