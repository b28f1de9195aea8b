#pragma once

// Final re-estimation of the latent class model under per-item equality
// constraints, and standard errors from the observed information of the
// constrained marginal likelihood.

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "slca/core.hpp"
#include "slca/em.hpp"

namespace slca {

struct SparseLcaModel {
  LcaModel base;
  std::vector<OrderedPartition> partitions;  // one per item
  Matrix se_beta;                            // J x K, tied entries share one value
  Vector se_nu;
  Index free_parameter_count = 0;
  FitDiagnostics diagnostics;
};

inline Index free_parameter_count(Index k, const std::vector<OrderedPartition>& partitions) {
  Index count = k - 1;
  for (const auto& p : partitions) count += p.size();
  return count;
}

namespace detail {

inline void check_partitions(Index k, Index j, const std::vector<OrderedPartition>& partitions) {
  if (static_cast<Index>(partitions.size()) != j) {
    throw Error(ErrorKind::DimensionMismatch, "expected " + std::to_string(j) + " partitions, got " +
                                                  std::to_string(partitions.size()));
  }
  for (std::size_t i = 0; i < partitions.size(); ++i) {
    if (partitions[i].k() != k) {
      throw Error(ErrorKind::DimensionMismatch, "partition for item " + std::to_string(i + 1) +
                                                    " does not cover K classes",
                  static_cast<long>(i));
    }
  }
}

inline bool constrained_m_step(const BinaryResponseMatrix& data, const std::vector<OrderedPartition>& partitions,
                               const PosteriorMatrix& post, LcaModel& model, double eps) {
  const Matrix& gamma = post.gamma;
  const Vector weight = gamma.colwise().sum().transpose();
  const Matrix endorse = data.values().transpose() * gamma;
  model.nu = weight / static_cast<double>(data.n_respondents());
  for (Index j = 0; j < model.n_items(); ++j) {
    for (const auto& block : partitions[static_cast<std::size_t>(j)].blocks()) {
      double s = 0.0;
      double t = 0.0;
      for (int c : block) {
        s += endorse(j, c);
        t += weight[c];
      }
      if (t < kEmptyClassWeight) continue;  // keep previous value
      const double value = std::clamp(s / t, eps, 1.0 - eps);
      for (int c : block) model.beta(j, c) = value;
    }
  }
  return false;
}

}  // namespace detail

/// EM on the marginal likelihood with beta tied within each partition block.
/// Class labels are inherited from `init`; output partitions list their
/// blocks in ascending order of the fitted values.
inline SparseLcaModel constrained_em(const BinaryResponseMatrix& data, const std::vector<OrderedPartition>& partitions,
                                     const LcaModel& init, const EmConfig& config) {
  config.validate();
  check_dimensions(data, init);
  detail::check_partitions(init.k(), data.n_items(), partitions);

  FitResult fit = detail::iterate_em(data, init, config, [&](const PosteriorMatrix& post, LcaModel& m) {
    return detail::constrained_m_step(data, partitions, post, m, config.clamp_epsilon);
  });

  SparseLcaModel out;
  out.base = std::move(fit.model);
  out.diagnostics = std::move(fit.diagnostics);
  out.partitions.reserve(partitions.size());
  for (std::size_t j = 0; j < partitions.size(); ++j) {
    std::vector<std::vector<int>> blocks = partitions[j].blocks();
    const auto row = out.base.beta.row(static_cast<Index>(j));
    std::stable_sort(blocks.begin(), blocks.end(),
                     [&](const auto& a, const auto& b) { return row[a.front()] < row[b.front()]; });
    out.partitions.emplace_back(partitions[j].k(), std::move(blocks));
  }
  out.free_parameter_count = free_parameter_count(out.base.k(), out.partitions);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.se_beta = Matrix::Constant(out.base.n_items(), out.base.k(), nan);
  out.se_nu = Vector::Constant(out.base.k(), nan);
  return out;
}

/// Free coordinates of a constrained model: nu_1..nu_{K-1} followed by one
/// probability per (item, block).
class ConstrainedParameterization {
 public:
  ConstrainedParameterization(Index k, std::vector<OrderedPartition> partitions)
      : k_(k), partitions_(std::move(partitions)) {
    for (const auto& p : partitions_) n_blocks_ += p.size();
  }

  Index k() const noexcept { return k_; }
  Index size() const noexcept { return k_ - 1 + n_blocks_; }

  Vector pack(const LcaModel& model) const {
    Vector theta(size());
    Index pos = 0;
    for (Index c = 0; c + 1 < k_; ++c) theta[pos++] = model.nu[c];
    for (std::size_t j = 0; j < partitions_.size(); ++j) {
      for (const auto& block : partitions_[j].blocks()) theta[pos++] = model.beta(static_cast<Index>(j), block.front());
    }
    return theta;
  }

  LcaModel unpack(const Vector& theta) const {
    LcaModel m;
    m.nu.resize(k_);
    Index pos = 0;
    double rest = 1.0;
    for (Index c = 0; c + 1 < k_; ++c) {
      m.nu[c] = theta[pos++];
      rest -= m.nu[c];
    }
    m.nu[k_ - 1] = rest;
    m.beta.resize(static_cast<Index>(partitions_.size()), k_);
    for (std::size_t j = 0; j < partitions_.size(); ++j) {
      for (const auto& block : partitions_[j].blocks()) {
        const double v = theta[pos++];
        for (int c : block) m.beta(static_cast<Index>(j), c) = v;
      }
    }
    return m;
  }

  /// Unclamped marginal log-likelihood at theta.
  double log_likelihood(const BinaryResponseMatrix& data, const Vector& theta) const {
    const LcaModel m = unpack(theta);
    Matrix lp = class_log_densities(data.values(), m.nu, m.beta);
    return detail::normalize_rows(lp, false);
  }

  /// Analytic score of the marginal log-likelihood with respect to theta.
  Vector score(const BinaryResponseMatrix& data, const Vector& theta) const {
    const LcaModel m = unpack(theta);
    Matrix gamma = class_log_densities(data.values(), m.nu, m.beta);
    detail::normalize_rows(gamma, true);
    const Vector weight = gamma.colwise().sum().transpose();
    const Matrix endorse = data.values().transpose() * gamma;

    Vector g(size());
    Index pos = 0;
    const double last = weight[k_ - 1] / m.nu[k_ - 1];
    for (Index c = 0; c + 1 < k_; ++c) g[pos++] = weight[c] / m.nu[c] - last;
    for (std::size_t j = 0; j < partitions_.size(); ++j) {
      for (const auto& block : partitions_[j].blocks()) {
        const double a = theta[pos];
        double num = 0.0;
        for (int c : block) num += endorse(static_cast<Index>(j), c) - a * weight[c];
        g[pos++] = num / (a * (1.0 - a));
      }
    }
    return g;
  }

  /// Largest step that keeps every probability (including nu_K) interior.
  double step(const Vector& theta, Index i, double rel) const {
    double room = std::min(theta[i], 1.0 - theta[i]);
    if (i < k_ - 1) room = std::min(room, 1.0 - theta.head(k_ - 1).sum());
    return rel * room;
  }

 private:
  Index k_;
  std::vector<OrderedPartition> partitions_;
  Index n_blocks_ = 0;
};

inline constexpr double kBoundaryBand = 1e-3;

/// Coordinates with regular information. A coordinate is on the boundary
/// when it sits at a clamp bound, or when it lies within kBoundaryBand of a
/// bound and moving it onto that bound does not lower the log-likelihood
/// (EM approaches such maxima too slowly to reach the clamp).
inline std::vector<Index> interior_coordinates(const BinaryResponseMatrix& data,
                                               const ConstrainedParameterization& param, const Vector& theta,
                                               double eps = kDefaultClamp) {
  std::vector<Index> out;
  const double lo = 2.0 * eps;
  const Index n_nu = param.k() - 1;
  double ll = std::numeric_limits<double>::quiet_NaN();
  for (Index i = 0; i < theta.size(); ++i) {
    if (!(theta[i] > lo && theta[i] < 1.0 - lo)) continue;
    if (i >= n_nu && (theta[i] < kBoundaryBand || theta[i] > 1.0 - kBoundaryBand)) {
      if (std::isnan(ll)) ll = param.log_likelihood(data, theta);
      Vector moved = theta;
      moved[i] = theta[i] < 0.5 ? eps : 1.0 - eps;
      if (param.log_likelihood(data, moved) >= ll) continue;
    }
    out.push_back(i);
  }
  return out;
}

/// Observed information over `coords` (all free coordinates when empty):
/// negative central-difference Jacobian of the analytic score, symmetrized.
inline Matrix observed_information(const BinaryResponseMatrix& data, const SparseLcaModel& model,
                                   std::vector<Index> coords = {}, double rel_step = 1e-5) {
  const ConstrainedParameterization param(model.base.k(), model.partitions);
  const Vector theta = param.pack(model.base);
  if (coords.empty()) {
    coords.resize(static_cast<std::size_t>(param.size()));
    std::iota(coords.begin(), coords.end(), Index{0});
  }
  const auto p = static_cast<Index>(coords.size());
  Matrix hessian(p, p);
  for (Index a = 0; a < p; ++a) {
    const Index i = coords[static_cast<std::size_t>(a)];
    const double h = param.step(theta, i, rel_step);
    Vector up = theta;
    Vector down = theta;
    up[i] += h;
    down[i] -= h;
    const Vector diff = (param.score(data, up) - param.score(data, down)) / (2.0 * h);
    for (Index b = 0; b < p; ++b) hessian(b, a) = diff[coords[static_cast<std::size_t>(b)]];
  }
  return -0.5 * (hessian + hessian.transpose());
}

/// Fills se_beta / se_nu from the inverse observed information. nu_K's error
/// follows from the covariance of nu_1..nu_{K-1} by the delta method.
/// Parameters at a clamp bound get NaN.
inline SparseLcaModel standard_errors(const BinaryResponseMatrix& data, const SparseLcaModel& model,
                                      double eps = kDefaultClamp) {
  check_dimensions(data, model.base);
  detail::check_partitions(model.base.k(), data.n_items(), model.partitions);
  const Index k = model.base.k();
  const ConstrainedParameterization param(k, model.partitions);
  const Vector theta = param.pack(model.base);
  const std::vector<Index> coords = interior_coordinates(data, param, theta, eps);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  SparseLcaModel out = model;
  out.free_parameter_count = param.size();
  Vector se = Vector::Constant(param.size(), nan);
  double nu_last = k == 1 ? 0.0 : nan;
  if (!coords.empty()) {
    const Matrix info = observed_information(data, model, coords);
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(info);
    if (eig.info() != Eigen::Success) {
      throw Error(ErrorKind::SingularInformation, "eigen-decomposition of the information failed");
    }
    const Vector& values = eig.eigenvalues();
    const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
    if (!(values[0] > 1e-9 * scale)) {
      Index worst = 0;
      eig.eigenvectors().col(0).cwiseAbs().maxCoeff(&worst);
      const Index param_index = coords[static_cast<std::size_t>(worst)];
      throw Error(ErrorKind::SingularInformation,
                  "information matrix is not positive definite (smallest eigenvalue " + std::to_string(values[0]) +
                      ", parameter " + std::to_string(param_index) + ")",
                  static_cast<long>(param_index));
    }
    const Matrix cov = eig.eigenvectors() * values.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    for (std::size_t a = 0; a < coords.size(); ++a) se[coords[a]] = std::sqrt(cov(static_cast<Index>(a), static_cast<Index>(a)));
    // Delta method for nu_K = 1 - sum of the others; needs every nu coordinate.
    if (k > 1 && static_cast<Index>(coords.size()) >= k - 1 && coords[static_cast<std::size_t>(k - 2)] == k - 2) {
      nu_last = std::sqrt(cov.topLeftCorner(k - 1, k - 1).sum());
    }
  }

  out.se_nu.resize(k);
  Index pos = 0;
  for (Index c = 0; c + 1 < k; ++c) out.se_nu[c] = se[pos++];
  out.se_nu[k - 1] = nu_last;
  out.se_beta.resize(model.base.n_items(), k);
  for (std::size_t j = 0; j < model.partitions.size(); ++j) {
    for (const auto& block : model.partitions[j].blocks()) {
      for (int c : block) out.se_beta(static_cast<Index>(j), c) = se[pos];
      ++pos;
    }
  }
  return out;
}

}  // namespace slca
