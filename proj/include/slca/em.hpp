#pragma once

// Unrestricted maximum-likelihood fitting of the latent class model by EM
// with random multi-start, and class-count selection by BIC.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <thread>
#include <utility>
#include <vector>

#include "slca/core.hpp"
#include "slca/rng.hpp"

namespace slca {

struct EmConfig {
  int max_iterations = 2000;
  double tolerance = 1e-7;  // absolute log-likelihood change
  int n_starts = 20;
  std::uint64_t seed = 20240601;
  double clamp_epsilon = kDefaultClamp;
  int threads = 1;  // workers across starts; results do not depend on it

  void validate() const {
    if (!(tolerance > 0.0)) throw Error(ErrorKind::Config, "tolerance must be positive");
    if (max_iterations < 1) throw Error(ErrorKind::Config, "max_iterations must be >= 1");
    if (n_starts < 1) throw Error(ErrorKind::Config, "n_starts must be >= 1");
    if (!(clamp_epsilon > 0.0 && clamp_epsilon < 0.5)) {
      throw Error(ErrorKind::Config, "clamp_epsilon must lie in (0, 0.5)");
    }
    if (threads < 1) throw Error(ErrorKind::Config, "threads must be >= 1");
  }
};

struct FitDiagnostics {
  int iterations_used = 0;
  bool converged = false;
  /// Log-likelihood after each E-step of the selected start, restarted
  /// whenever an empty class had to be re-seeded.
  std::vector<double> ll_trace;
  int start_index_selected = 0;
  std::vector<double> start_log_likelihoods;
  int reseeds = 0;
};

struct FitResult {
  LcaModel model;
  FitDiagnostics diagnostics;
};

namespace detail {

inline constexpr double kEmptyClassWeight = 1e-8;

/// Runs EM iterations from `model` until the absolute log-likelihood change
/// drops below tolerance. `m_step(gamma, model)` updates the parameters in
/// place and returns true when it had to re-seed a degenerate class.
template <class MStep>
FitResult iterate_em(const BinaryResponseMatrix& data, LcaModel model, const EmConfig& config,
                     MStep&& m_step) {
  FitResult out;
  auto& diag = out.diagnostics;
  EStep e = e_step(data, model, config.clamp_epsilon);
  double prev = e.log_likelihood;
  diag.ll_trace.push_back(prev);
  for (int it = 1; it <= config.max_iterations; ++it) {
    const bool reseeded = m_step(e.posterior, model);
    e = e_step(data, model, config.clamp_epsilon);
    diag.iterations_used = it;
    if (reseeded) {
      ++diag.reseeds;
      diag.ll_trace.assign(1, e.log_likelihood);
      prev = e.log_likelihood;
      continue;
    }
    diag.ll_trace.push_back(e.log_likelihood);
    if (std::abs(e.log_likelihood - prev) < config.tolerance) {
      diag.converged = true;
      break;
    }
    prev = e.log_likelihood;
  }
  model.log_likelihood = e.log_likelihood;
  model.n_used = data.n_respondents();
  out.model = std::move(model);
  return out;
}

/// Closed-form M-step; empty classes are re-seeded from `rng`.
inline bool unrestricted_m_step(const BinaryResponseMatrix& data, const PosteriorMatrix& post,
                                LcaModel& model, double eps, Rng& rng) {
  const Matrix& gamma = post.gamma;
  const Vector weight = gamma.colwise().sum().transpose();
  const Matrix endorse = data.values().transpose() * gamma;  // J x K
  const auto n = static_cast<double>(data.n_respondents());
  bool reseeded = false;
  for (Index k = 0; k < model.k(); ++k) {
    if (weight[k] < kEmptyClassWeight) {
      for (Index j = 0; j < model.n_items(); ++j) model.beta(j, k) = rng.uniform(0.2, 0.8);
      model.nu[k] = 1.0 / static_cast<double>(model.k());
      reseeded = true;
    } else {
      model.beta.col(k) = endorse.col(k) / weight[k];
      model.nu[k] = weight[k] / n;
    }
  }
  if (reseeded) model.nu /= model.nu.sum();
  model.beta = clamp_probabilities(model.beta, eps);
  return reseeded;
}

inline LcaModel random_start(Index k, Index j, Rng& rng) {
  LcaModel m;
  m.nu.resize(k);
  for (Index c = 0; c < k; ++c) {
    double u = 0.0;
    while (u <= 0.0) u = rng.uniform();
    m.nu[c] = u;
  }
  m.nu /= m.nu.sum();
  m.beta.resize(j, k);
  for (Index c = 0; c < k; ++c) {
    for (Index r = 0; r < j; ++r) m.beta(r, c) = rng.uniform(0.2, 0.8);
  }
  return m;
}

inline FitResult single_start(const BinaryResponseMatrix& data, Index k, const EmConfig& config,
                              int start) {
  Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(Stream::EmStarts),
                      static_cast<std::uint64_t>(start)));
  LcaModel init = random_start(k, data.n_items(), rng);
  const double eps = config.clamp_epsilon;
  return iterate_em(data, std::move(init), config, [&](const PosteriorMatrix& post, LcaModel& m) {
    return unrestricted_m_step(data, post, m, eps, rng);
  });
}

/// Runs `job(i)` for i in [0, n) on up to `threads` workers.
template <class Job>
void parallel_for(int n, int threads, Job&& job) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Best-of-n_starts EM fit with K classes. Classes of the returned model are
/// ordered by descending proportion (ties: lower original index first).
inline FitResult em_fit(const BinaryResponseMatrix& data, int k, const EmConfig& config) {
  config.validate();
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "number of classes must be >= 1");
  if (k > data.n_respondents()) {
    throw Error(ErrorKind::InvalidArgument, "more classes (" + std::to_string(k) +
                                                ") than respondents (" +
                                                std::to_string(data.n_respondents()) + ")");
  }

  if (k == 1) {
    FitResult out;
    out.model.nu = Vector::Ones(1);
    out.model.beta = clamp_probabilities(data.values().colwise().mean().transpose(), config.clamp_epsilon);
    out.model.log_likelihood = log_likelihood(data, out.model, config.clamp_epsilon);
    out.model.n_used = data.n_respondents();
    out.diagnostics.iterations_used = 1;
    out.diagnostics.converged = true;
    out.diagnostics.ll_trace = {out.model.log_likelihood};
    out.diagnostics.start_log_likelihoods = {out.model.log_likelihood};
    return out;
  }

  std::vector<FitResult> runs(static_cast<std::size_t>(config.n_starts));
  detail::parallel_for(config.n_starts, config.threads, [&](int s) {
    runs[static_cast<std::size_t>(s)] = detail::single_start(data, k, config, s);
  });

  std::size_t best = 0;
  for (std::size_t s = 1; s < runs.size(); ++s) {
    if (runs[s].model.log_likelihood > runs[best].model.log_likelihood) best = s;
  }
  std::vector<double> start_lls;
  for (const auto& r : runs) start_lls.push_back(r.model.log_likelihood);
  FitResult out = std::move(runs[best]);
  out.diagnostics.start_index_selected = static_cast<int>(best);
  out.diagnostics.start_log_likelihoods = std::move(start_lls);
  const auto order = descending_proportion_order(out.model.nu);
  const double ll = out.model.log_likelihood;
  out.model = permute_classes(out.model, order);
  out.model.log_likelihood = ll;
  return out;
}

struct ClassCountSelection {
  int selected_k = 0;
  std::vector<std::pair<int, double>> bic_trace;
  std::vector<FitResult> fits;  // parallel to bic_trace

  const FitResult& selected_fit() const {
    for (std::size_t i = 0; i < bic_trace.size(); ++i) {
      if (bic_trace[i].first == selected_k) return fits[i];
    }
    throw Error(ErrorKind::InvalidArgument, "selected class count missing from trace");
  }
};

/// Fits every K in [k_min, k_max] and picks the BIC minimizer; ties go to the
/// smaller K.
inline ClassCountSelection select_num_classes(const BinaryResponseMatrix& data, int k_min, int k_max,
                                              const EmConfig& config) {
  if (k_min < 1 || k_max < k_min) {
    throw Error(ErrorKind::Config, "class range must satisfy 1 <= k_min <= k_max");
  }
  ClassCountSelection out;
  double best = std::numeric_limits<double>::infinity();
  for (int k = k_min; k <= k_max; ++k) {
    FitResult fit = em_fit(data, k, config);
    const double value = bic_value(fit.model.log_likelihood, parameter_count(k, data.n_items()),
                                   data.n_respondents());
    out.bic_trace.emplace_back(k, value);
    out.fits.push_back(std::move(fit));
    if (value < best) {
      best = value;
      out.selected_k = k;
    }
  }
  return out;
}

}  // namespace slca
