#pragma once

// Shared model types for binary latent class analysis: response data, the
// (nu, B) parameterization, posteriors over classes, and ordered partitions
// of the class labels used to express per-item equality constraints.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "slca/errors.hpp"

namespace slca {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kDefaultClamp = 1e-6;

/// N x J matrix of 0/1 responses. Stored as doubles so the E and M steps can
/// use dense matrix products directly.
class BinaryResponseMatrix {
 public:
  BinaryResponseMatrix() = default;

  explicit BinaryResponseMatrix(Matrix values, std::vector<std::string> labels = {})
      : values_(std::move(values)), labels_(std::move(labels)) {
    if (values_.rows() < 1 || values_.cols() < 1) {
      throw Error(ErrorKind::InvalidArgument, "response matrix must be at least 1x1");
    }
    for (Index i = 0; i < values_.rows(); ++i) {
      for (Index j = 0; j < values_.cols(); ++j) {
        const double v = values_(i, j);
        if (v != 0.0 && v != 1.0) {
          throw ParseError(ErrorKind::Parse, "response is not 0 or 1", i + 1, j + 1);
        }
      }
    }
    if (labels_.empty()) {
      labels_.reserve(static_cast<std::size_t>(values_.cols()));
      for (Index j = 0; j < values_.cols(); ++j) labels_.push_back("item" + std::to_string(j + 1));
    } else if (static_cast<Index>(labels_.size()) != values_.cols()) {
      throw Error(ErrorKind::DimensionMismatch, "label count differs from item count");
    }
    index_patterns();
  }

  static BinaryResponseMatrix from_rows(const std::vector<std::vector<int>>& rows) {
    if (rows.empty() || rows.front().empty()) {
      throw Error(ErrorKind::InvalidArgument, "response matrix must be at least 1x1");
    }
    Matrix values(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.front().size()) {
        throw ParseError(ErrorKind::Parse, "ragged row", static_cast<long>(i + 1),
                         static_cast<long>(rows[i].size()));
      }
      for (std::size_t j = 0; j < rows[i].size(); ++j) {
        values(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
      }
    }
    return BinaryResponseMatrix(std::move(values));
  }

  Index n_respondents() const noexcept { return values_.rows(); }
  Index n_items() const noexcept { return values_.cols(); }
  const Matrix& values() const noexcept { return values_; }
  auto item(Index j) const { return values_.col(j); }
  const std::vector<std::string>& item_labels() const noexcept { return labels_; }

  /// Distinct response rows, used when they are few enough to pay off
  /// (at most half of N). Empty otherwise.
  const Matrix& patterns() const noexcept { return patterns_; }
  bool has_patterns() const noexcept { return patterns_.rows() > 0; }
  /// Row of patterns() matching respondent i.
  Index pattern_of(Index i) const { return pattern_of_[static_cast<std::size_t>(i)]; }
  /// Number of respondents sharing each pattern.
  const Vector& pattern_counts() const noexcept { return pattern_counts_; }
  /// First respondent with each pattern, for error reporting.
  Index pattern_first_row(Index p) const { return first_row_[static_cast<std::size_t>(p)]; }

 private:
  void index_patterns() {
    const Index n = values_.rows();
    const Index j = values_.cols();
    if (j > 63) return;
    std::unordered_map<std::uint64_t, Index> seen;
    std::vector<Index> of(static_cast<std::size_t>(n));
    std::vector<Index> first;
    for (Index i = 0; i < n; ++i) {
      std::uint64_t key = 0;
      for (Index c = 0; c < j; ++c) key |= static_cast<std::uint64_t>(values_(i, c) == 1.0) << c;
      const auto [it, added] = seen.emplace(key, static_cast<Index>(first.size()));
      if (added) first.push_back(i);
      of[static_cast<std::size_t>(i)] = it->second;
    }
    const auto p = static_cast<Index>(first.size());
    if (2 * p > n) return;
    patterns_.resize(p, j);
    pattern_counts_ = Vector::Zero(p);
    for (Index r = 0; r < p; ++r) patterns_.row(r) = values_.row(first[static_cast<std::size_t>(r)]);
    for (Index i = 0; i < n; ++i) pattern_counts_[of[static_cast<std::size_t>(i)]] += 1.0;
    pattern_of_ = std::move(of);
    first_row_ = std::move(first);
  }

  Matrix values_;
  std::vector<std::string> labels_;
  Matrix patterns_;
  std::vector<Index> pattern_of_;
  Vector pattern_counts_;
  std::vector<Index> first_row_;
};

/// Class proportions nu (length K) and item-response probabilities B (J x K).
struct LcaModel {
  Vector nu;
  Matrix beta;
  double log_likelihood = std::numeric_limits<double>::quiet_NaN();
  Index n_used = 0;

  Index k() const noexcept { return nu.size(); }
  Index n_items() const noexcept { return beta.rows(); }
};

struct PosteriorMatrix {
  Matrix gamma;  // N x K, rows sum to one
};

inline void check_proportions(const Vector& nu, double tol = 1e-10) {
  if (nu.size() < 1) throw Error(ErrorKind::InvalidArgument, "empty class proportions");
  for (Index k = 0; k < nu.size(); ++k) {
    if (!(nu[k] >= 0.0 && nu[k] <= 1.0)) {
      throw Error(ErrorKind::InvalidArgument, "class proportion outside [0,1]", k);
    }
  }
  if (std::abs(nu.sum() - 1.0) > tol) {
    throw Error(ErrorKind::InvalidArgument, "class proportions do not sum to one");
  }
}

inline Matrix clamp_probabilities(const Matrix& beta, double eps = kDefaultClamp) {
  return beta.cwiseMax(eps).cwiseMin(1.0 - eps);
}

inline void check_dimensions(const BinaryResponseMatrix& data, const LcaModel& model) {
  if (model.beta.cols() != model.nu.size()) {
    throw Error(ErrorKind::DimensionMismatch, "beta has " + std::to_string(model.beta.cols()) +
                                                  " columns but nu has length " +
                                                  std::to_string(model.nu.size()));
  }
  if (model.beta.rows() != data.n_items()) {
    throw Error(ErrorKind::DimensionMismatch, "model has " + std::to_string(model.beta.rows()) +
                                                  " items but data has " +
                                                  std::to_string(data.n_items()));
  }
}

/// Per-respondent, per-class joint log densities log(nu_k) + log P(Y_i | class k).
/// `beta` is used as given; callers clamp first.
inline Matrix class_log_densities(const Matrix& y, const Vector& nu, const Matrix& beta) {
  const Matrix log_b = beta.array().log().matrix();
  const Matrix log_1mb = (1.0 - beta.array()).log().matrix();
  Matrix lp = y * (log_b - log_1mb);
  const Eigen::RowVectorXd base = log_1mb.colwise().sum() + nu.array().log().matrix().transpose();
  lp.rowwise() += base;
  return lp;
}

struct EStep {
  PosteriorMatrix posterior;
  double log_likelihood = 0.0;
};

namespace detail {

/// Row-wise log-sum-exp; normalizes `lp` into posteriors in place. Row i
/// counts `weights[i]` times when weights are given; `row_id` maps a row to
/// the respondent named in errors.
inline double normalize_rows(Matrix& lp, bool want_posterior, const Vector* weights = nullptr,
                             const std::vector<Index>* row_id = nullptr) {
  double total = 0.0;
  for (Index i = 0; i < lp.rows(); ++i) {
    const Index who = row_id ? (*row_id)[static_cast<std::size_t>(i)] : i;
    const double mx = lp.row(i).maxCoeff();
    if (!std::isfinite(mx)) {
      throw Error(ErrorKind::Numerical, "non-finite likelihood for respondent " + std::to_string(who + 1), who);
    }
    double s = 0.0;
    for (Index k = 0; k < lp.cols(); ++k) s += std::exp(lp(i, k) - mx);
    const double lse = mx + std::log(s);
    if (!std::isfinite(lse)) {
      throw Error(ErrorKind::Numerical, "non-finite likelihood for respondent " + std::to_string(who + 1), who);
    }
    total += weights ? (*weights)[i] * lse : lse;
    if (want_posterior) {
      for (Index k = 0; k < lp.cols(); ++k) lp(i, k) = std::exp(lp(i, k) - lse);
    }
  }
  return total;
}

inline std::vector<Index> first_rows(const BinaryResponseMatrix& data) {
  std::vector<Index> out(static_cast<std::size_t>(data.patterns().rows()));
  for (Index p = 0; p < data.patterns().rows(); ++p) out[static_cast<std::size_t>(p)] = data.pattern_first_row(p);
  return out;
}

}  // namespace detail

/// Posterior class memberships and marginal log-likelihood in one pass.
/// Repeated response patterns are evaluated once.
inline EStep e_step(const BinaryResponseMatrix& data, const LcaModel& model,
                    double eps = kDefaultClamp) {
  check_dimensions(data, model);
  const Matrix beta = clamp_probabilities(model.beta, eps);
  EStep out;
  if (data.has_patterns()) {
    Matrix lp = class_log_densities(data.patterns(), model.nu, beta);
    const auto ids = detail::first_rows(data);
    out.log_likelihood = detail::normalize_rows(lp, true, &data.pattern_counts(), &ids);
    out.posterior.gamma.resize(data.n_respondents(), model.k());
    for (Index i = 0; i < data.n_respondents(); ++i) out.posterior.gamma.row(i) = lp.row(data.pattern_of(i));
    return out;
  }
  Matrix lp = class_log_densities(data.values(), model.nu, beta);
  out.log_likelihood = detail::normalize_rows(lp, true);
  out.posterior.gamma = std::move(lp);
  return out;
}

/// Marginal log-likelihood sum_i log sum_k nu_k prod_j b^y (1-b)^(1-y).
inline double log_likelihood(const BinaryResponseMatrix& data, const LcaModel& model,
                             double eps = kDefaultClamp) {
  check_dimensions(data, model);
  const Matrix beta = clamp_probabilities(model.beta, eps);
  if (data.has_patterns()) {
    Matrix lp = class_log_densities(data.patterns(), model.nu, beta);
    const auto ids = detail::first_rows(data);
    return detail::normalize_rows(lp, false, &data.pattern_counts(), &ids);
  }
  Matrix lp = class_log_densities(data.values(), model.nu, beta);
  return detail::normalize_rows(lp, false);
}

inline PosteriorMatrix posterior(const BinaryResponseMatrix& data, const LcaModel& model,
                                 double eps = kDefaultClamp) {
  return e_step(data, model, eps).posterior;
}

/// Free parameters of an unrestricted K-class model on J items.
inline Index parameter_count(Index k, Index j) { return (k - 1) + j * k; }

inline double bic_value(double log_lik, Index n_params, Index n) {
  return -2.0 * log_lik + static_cast<double>(n_params) * std::log(static_cast<double>(n));
}

inline double bic(const BinaryResponseMatrix& data, const LcaModel& model,
                  double eps = kDefaultClamp) {
  const double ll = log_likelihood(data, model, eps);
  return bic_value(ll, parameter_count(model.k(), model.n_items()), data.n_respondents());
}

/// Reorders classes so that new class c is old class perm[c].
inline LcaModel permute_classes(const LcaModel& model, std::span<const int> perm) {
  LcaModel out = model;
  for (Index c = 0; c < model.k(); ++c) {
    out.nu[c] = model.nu[perm[static_cast<std::size_t>(c)]];
    out.beta.col(c) = model.beta.col(perm[static_cast<std::size_t>(c)]);
  }
  return out;
}

/// Permutation listing classes by descending proportion; ties keep the
/// smaller original index first.
inline std::vector<int> descending_proportion_order(const Vector& nu) {
  std::vector<int> order(static_cast<std::size_t>(nu.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return nu[a] > nu[b]; });
  return order;
}

/// Ordered list of disjoint, non-empty blocks of 0-based class indices
/// covering {0..K-1}. Block order is the intended ascending order of the
/// block-level probabilities; classes within a block are kept sorted.
class OrderedPartition {
 public:
  OrderedPartition() = default;

  OrderedPartition(int k, std::vector<std::vector<int>> blocks) : k_(k), blocks_(std::move(blocks)) {
    if (k_ < 1) throw Error(ErrorKind::InvalidArgument, "partition needs K >= 1");
    std::vector<int> seen(static_cast<std::size_t>(k_), 0);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      auto& block = blocks_[b];
      if (block.empty()) throw Error(ErrorKind::InvalidArgument, "empty partition block", static_cast<long>(b));
      std::sort(block.begin(), block.end());
      for (int c : block) {
        if (c < 0 || c >= k_) throw Error(ErrorKind::InvalidArgument, "class index out of range", c);
        if (seen[static_cast<std::size_t>(c)]++) {
          throw Error(ErrorKind::InvalidArgument, "class appears in two blocks", c);
        }
      }
    }
    for (int c = 0; c < k_; ++c) {
      if (!seen[static_cast<std::size_t>(c)]) {
        throw Error(ErrorKind::InvalidArgument, "class missing from partition", c);
      }
    }
  }

  static OrderedPartition singletons(std::span<const int> order) {
    std::vector<std::vector<int>> blocks;
    for (int c : order) blocks.push_back({c});
    return OrderedPartition(static_cast<int>(order.size()), std::move(blocks));
  }

  static OrderedPartition whole(int k) {
    std::vector<int> all(static_cast<std::size_t>(k));
    std::iota(all.begin(), all.end(), 0);
    return OrderedPartition(k, {std::move(all)});
  }

  /// Groups classes with exactly equal values, blocks ordered by value.
  static OrderedPartition from_levels(std::span<const double> values) {
    std::vector<int> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
    std::vector<std::vector<int>> blocks;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i == 0 || values[order[i]] != values[order[i - 1]]) blocks.emplace_back();
      blocks.back().push_back(order[i]);
    }
    return OrderedPartition(static_cast<int>(values.size()), std::move(blocks));
  }

  int k() const noexcept { return k_; }
  int size() const noexcept { return static_cast<int>(blocks_.size()); }
  const std::vector<std::vector<int>>& blocks() const noexcept { return blocks_; }
  const std::vector<int>& block(int b) const { return blocks_.at(static_cast<std::size_t>(b)); }

  /// Block index of each class.
  std::vector<int> labels() const {
    std::vector<int> out(static_cast<std::size_t>(k_), -1);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      for (int c : blocks_[b]) out[static_cast<std::size_t>(c)] = static_cast<int>(b);
    }
    return out;
  }

  /// Merge blocks b and b+1, keeping the inherited order of the rest.
  OrderedPartition merge_adjacent(int b) const {
    if (b < 0 || b + 1 >= size()) throw Error(ErrorKind::InvalidArgument, "no adjacent block to merge", b);
    std::vector<std::vector<int>> blocks;
    blocks.reserve(blocks_.size() - 1);
    for (int l = 0; l < size(); ++l) {
      if (l == b + 1) continue;
      blocks.push_back(blocks_[static_cast<std::size_t>(l)]);
      if (l == b) {
        const auto& next = blocks_[static_cast<std::size_t>(b + 1)];
        blocks.back().insert(blocks.back().end(), next.begin(), next.end());
      }
    }
    return OrderedPartition(k_, std::move(blocks));
  }

  /// Same grouping of classes, ignoring block order.
  bool same_grouping(const OrderedPartition& other) const {
    if (k_ != other.k_ || size() != other.size()) return false;
    auto a = blocks_;
    auto b = other.blocks_;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
  }

  /// Relabel classes: class c becomes map[c].
  OrderedPartition relabeled(std::span<const int> map) const {
    std::vector<std::vector<int>> blocks = blocks_;
    for (auto& block : blocks) {
      for (int& c : block) c = map[static_cast<std::size_t>(c)];
    }
    return OrderedPartition(k_, std::move(blocks));
  }

  friend bool operator==(const OrderedPartition&, const OrderedPartition&) = default;

 private:
  int k_ = 0;
  std::vector<std::vector<int>> blocks_;
};

}  // namespace slca
