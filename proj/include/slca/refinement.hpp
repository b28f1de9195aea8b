#pragma once

// Item-level refinement: the posterior-weighted Bernoulli pseudo-likelihood
// of a single item, its closed-form maximizer under block-equality
// constraints, the greedy adjacent-merge search over level counts, EBIC
// scoring, and an exhaustive set-partition search used as a test oracle.

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "slca/core.hpp"
#include "slca/em.hpp"

namespace slca {

/// Posterior-weighted endorsement counts S_k = sum_i gamma_ik y_i and class
/// weights T_k = sum_i gamma_ik for one item.
struct SufficientStats {
  Vector endorse;
  Vector weight;

  Index k() const noexcept { return weight.size(); }
};

inline SufficientStats item_statistics(const Eigen::Ref<const Vector>& item_responses,
                                       const PosteriorMatrix& post) {
  if (item_responses.size() != post.gamma.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "item has " + std::to_string(item_responses.size()) +
                                                  " responses but posterior has " +
                                                  std::to_string(post.gamma.rows()) + " rows");
  }
  return {post.gamma.transpose() * item_responses, post.gamma.colwise().sum().transpose()};
}

/// Q_j(beta_j) = sum_k S_k log(beta_k) + (T_k - S_k) log(1 - beta_k).
inline double pseudo_likelihood(const SufficientStats& stats, const Vector& beta_j) {
  if (beta_j.size() != stats.k()) {
    throw Error(ErrorKind::DimensionMismatch, "beta has " + std::to_string(beta_j.size()) +
                                                  " entries for " + std::to_string(stats.k()) +
                                                  " classes");
  }
  double q = 0.0;
  for (Index k = 0; k < stats.k(); ++k) {
    q += stats.endorse[k] * std::log(beta_j[k]) +
         (stats.weight[k] - stats.endorse[k]) * std::log1p(-beta_j[k]);
  }
  return q;
}

inline double pseudo_likelihood(const Eigen::Ref<const Vector>& item_responses,
                                const PosteriorMatrix& post, const Vector& beta_j) {
  return pseudo_likelihood(item_statistics(item_responses, post), beta_j);
}

/// One candidate level structure for an item.
struct ItemCandidate {
  int m = 0;
  OrderedPartition partition;
  Vector beta;  // length K, constant within blocks
  double pseudo_ll = 0.0;
  /// Set when adjacent block values are not strictly increasing (ties after
  /// clamping, or an order reversal).
  bool levels_not_increasing = false;
};

namespace detail {

inline bool levels_increasing(const OrderedPartition& partition, const Vector& beta) {
  for (int b = 0; b + 1 < partition.size(); ++b) {
    const double lo = beta[partition.block(b).front()];
    const double hi = beta[partition.block(b + 1).front()];
    if (!(hi - lo > 1e-12)) return false;
  }
  return true;
}

}  // namespace detail

/// Closed-form maximizer of Q_j subject to equal values within each block:
/// every block takes its pooled weighted mean, clamped to [eps, 1 - eps].
inline ItemCandidate block_solution(const SufficientStats& stats, const OrderedPartition& partition,
                                    double eps = kDefaultClamp) {
  if (partition.k() != stats.k()) {
    throw Error(ErrorKind::DimensionMismatch, "partition covers " + std::to_string(partition.k()) +
                                                  " classes, statistics cover " +
                                                  std::to_string(stats.k()));
  }
  ItemCandidate out;
  out.m = partition.size();
  out.partition = partition;
  out.beta.resize(stats.k());
  for (int b = 0; b < partition.size(); ++b) {
    double s = 0.0;
    double t = 0.0;
    for (int c : partition.block(b)) {
      s += stats.endorse[c];
      t += stats.weight[c];
    }
    if (!(t > 1e-12)) {
      throw Error(ErrorKind::DegenerateBlock, "block " + std::to_string(b + 1) + " has total weight " +
                                                  std::to_string(t),
                  b);
    }
    const double value = std::clamp(s / t, eps, 1.0 - eps);
    for (int c : partition.block(b)) out.beta[c] = value;
  }
  out.pseudo_ll = pseudo_likelihood(stats, out.beta);
  out.levels_not_increasing = !detail::levels_increasing(partition, out.beta);
  return out;
}

/// Greedy adjacent-merge search. Classes are ordered by their unrestricted
/// estimates (stable on ties), the K-level candidate keeps those estimates
/// as-is, and each coarser level count merges the adjacent pair of blocks
/// with the largest resulting pseudo-likelihood. Element m-1 of the result
/// is the m-level candidate.
inline std::vector<ItemCandidate> stepwise_search(const SufficientStats& stats, const Vector& beta_hat_j,
                                                  double eps = kDefaultClamp) {
  const int k = static_cast<int>(stats.k());
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "need at least one class");
  if (beta_hat_j.size() != k) {
    throw Error(ErrorKind::DimensionMismatch, "unrestricted estimate length differs from K");
  }
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return beta_hat_j[a] < beta_hat_j[b]; });

  std::vector<ItemCandidate> candidates(static_cast<std::size_t>(k));
  ItemCandidate& finest = candidates.back();
  finest.m = k;
  finest.partition = OrderedPartition::singletons(order);
  finest.beta = beta_hat_j.cwiseMax(eps).cwiseMin(1.0 - eps);
  finest.pseudo_ll = pseudo_likelihood(stats, finest.beta);
  finest.levels_not_increasing = !detail::levels_increasing(finest.partition, finest.beta);

  for (int s = k; s >= 2; --s) {
    const OrderedPartition& current = candidates[static_cast<std::size_t>(s - 1)].partition;
    ItemCandidate best;
    bool have = false;
    for (int b = 0; b + 1 < s; ++b) {
      ItemCandidate trial = block_solution(stats, current.merge_adjacent(b), eps);
      if (!have || trial.pseudo_ll > best.pseudo_ll) {
        best = std::move(trial);
        have = true;
      }
    }
    candidates[static_cast<std::size_t>(s - 2)] = std::move(best);
  }
  return candidates;
}

inline std::vector<ItemCandidate> stepwise_search(const Eigen::Ref<const Vector>& item_responses,
                                                  const PosteriorMatrix& post, const Vector& beta_hat_j,
                                                  double eps = kDefaultClamp) {
  return stepwise_search(item_statistics(item_responses, post), beta_hat_j, eps);
}

struct EbicConfig {
  double rho = 20.0;

  void validate() const {
    if (!(rho >= 1.0)) throw Error(ErrorKind::Config, "rho must be >= 1");
  }
};

inline double ebic_value(double pseudo_ll, int m, Index n, double rho) {
  return -2.0 * pseudo_ll + m * std::log(static_cast<double>(n)) + 2.0 * m * std::log(rho);
}

/// -2 Q + m log N + 2 m log rho.
inline double ebic(const ItemCandidate& candidate, Index n, const EbicConfig& config) {
  config.validate();
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "sample size must be >= 1");
  return ebic_value(candidate.pseudo_ll, candidate.m, n, config.rho);
}

struct ItemRefinement {
  int item_index = 0;
  std::vector<ItemCandidate> candidates;  // m = 1..K
  std::vector<double> ebic_trace;         // m = 1..K
  int selected_m = 0;
  OrderedPartition selected_partition;

  const ItemCandidate& selected() const { return candidates.at(static_cast<std::size_t>(selected_m - 1)); }
};

/// Scores an existing candidate path; argmin EBIC with ties to the smaller m.
inline ItemRefinement select_levels(int item_index, std::vector<ItemCandidate> candidates, Index n,
                                    const EbicConfig& config) {
  ItemRefinement out;
  out.item_index = item_index;
  out.candidates = std::move(candidates);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& cand : out.candidates) {
    const double value = ebic(cand, n, config);
    out.ebic_trace.push_back(value);
    if (value < best) {
      best = value;
      out.selected_m = cand.m;
    }
  }
  out.selected_partition = out.selected().partition;
  return out;
}

inline ItemRefinement refine_item(int item_index, const BinaryResponseMatrix& data, const PosteriorMatrix& post,
                                  const Matrix& beta_hat, const EbicConfig& config,
                                  double eps = kDefaultClamp) {
  if (item_index < 0 || item_index >= data.n_items()) {
    throw Error(ErrorKind::InvalidArgument, "item index out of range", item_index);
  }
  if (beta_hat.rows() != data.n_items() || beta_hat.cols() != post.gamma.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "unrestricted estimate does not match data and posterior");
  }
  const SufficientStats stats = item_statistics(data.item(item_index), post);
  const Vector beta_hat_j = beta_hat.row(item_index).transpose();
  return select_levels(item_index, stepwise_search(stats, beta_hat_j, eps), data.n_respondents(), config);
}

/// Refines every item; items are independent so the order is irrelevant.
inline std::vector<ItemRefinement> refine_items(const BinaryResponseMatrix& data, const PosteriorMatrix& post,
                                                const Matrix& beta_hat, const EbicConfig& config,
                                                double eps = kDefaultClamp, int threads = 1) {
  config.validate();
  std::vector<ItemRefinement> out(static_cast<std::size_t>(data.n_items()));
  detail::parallel_for(static_cast<int>(data.n_items()), threads, [&](int j) {
    out[static_cast<std::size_t>(j)] = refine_item(j, data, post, beta_hat, config, eps);
  });
  return out;
}

inline constexpr int kExhaustiveMaxClasses = 10;

/// Best m-block partition over all set partitions of the K classes
/// (adjacency ignored). Blocks of the result are ordered by value.
inline ItemCandidate exhaustive_item_oracle(const SufficientStats& stats, int m, double eps = kDefaultClamp) {
  const int k = static_cast<int>(stats.k());
  if (k > kExhaustiveMaxClasses) {
    throw Error(ErrorKind::InvalidArgument, "exhaustive search refused for K > " +
                                                std::to_string(kExhaustiveMaxClasses));
  }
  if (m < 1 || m > k) throw Error(ErrorKind::InvalidArgument, "level count outside 1..K", m);

  ItemCandidate best;
  bool have = false;
  // Restricted growth strings: labels[0] = 0, labels[c] <= 1 + max(labels[0..c-1]).
  std::vector<int> labels(static_cast<std::size_t>(k), 0);
  std::function<void(int, int)> visit = [&](int pos, int used) {
    if (used + (k - pos) < m) return;
    if (pos == k) {
      if (used != m) return;
      std::vector<std::vector<int>> blocks(static_cast<std::size_t>(m));
      for (int c = 0; c < k; ++c) blocks[static_cast<std::size_t>(labels[static_cast<std::size_t>(c)])].push_back(c);
      ItemCandidate trial = block_solution(stats, OrderedPartition(k, std::move(blocks)), eps);
      if (!have || trial.pseudo_ll > best.pseudo_ll) {
        best = std::move(trial);
        have = true;
      }
      return;
    }
    for (int l = 0; l <= std::min(used, m - 1); ++l) {
      labels[static_cast<std::size_t>(pos)] = l;
      visit(pos + 1, std::max(used, l + 1));
    }
  };
  visit(0, 0);

  // Present blocks in ascending value order.
  std::vector<std::vector<int>> blocks = best.partition.blocks();
  std::stable_sort(blocks.begin(), blocks.end(), [&](const auto& a, const auto& b) {
    return best.beta[a.front()] < best.beta[b.front()];
  });
  best.partition = OrderedPartition(k, std::move(blocks));
  best.levels_not_increasing = !detail::levels_increasing(best.partition, best.beta);
  return best;
}

inline ItemCandidate exhaustive_item_oracle(const Eigen::Ref<const Vector>& item_responses,
                                            const PosteriorMatrix& post, int m, double eps = kDefaultClamp) {
  return exhaustive_item_oracle(item_statistics(item_responses, post), m, eps);
}

}  // namespace slca
