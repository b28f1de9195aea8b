#include <gtest/gtest.h>

#include "slca/em.hpp"
#include "slca/simulation.hpp"

using namespace slca;

namespace {

LcaModel separated_truth() {
  LcaModel m;
  m.nu = Vector(3);
  m.nu << 0.5, 0.3, 0.2;
  m.beta = Matrix(6, 3);
  m.beta << 0.9, 0.1, 0.5,
            0.85, 0.15, 0.8,
            0.9, 0.2, 0.1,
            0.1, 0.9, 0.2,
            0.2, 0.8, 0.9,
            0.1, 0.85, 0.15;
  return m;
}

EmConfig quick_config() {
  EmConfig c;
  c.n_starts = 5;
  c.seed = 99;
  return c;
}

}  // namespace

TEST(EmFit, LogLikelihoodNeverDecreases) {
  const auto data = sample_dataset(separated_truth(), 800, 1);
  EmConfig c = quick_config();
  for (int s = 0; s < c.n_starts; ++s) {
    const FitResult r = detail::single_start(data, 3, c, s);
    ASSERT_GE(r.diagnostics.ll_trace.size(), 2u);
    for (std::size_t t = 1; t < r.diagnostics.ll_trace.size(); ++t) {
      EXPECT_GE(r.diagnostics.ll_trace[t], r.diagnostics.ll_trace[t - 1] - 1e-8);
    }
  }
}

TEST(EmFit, RecoversSeparatedClasses) {
  const LcaModel truth = separated_truth();
  const auto data = sample_dataset(truth, 3000, 2);
  const FitResult fit = em_fit(data, 3, quick_config());
  EXPECT_TRUE(fit.diagnostics.converged);
  const Alignment a = mse_beta_aligned(fit.model.beta, truth.beta);
  EXPECT_LT(a.mse, 5e-3);
  // Largest class first.
  EXPECT_GE(fit.model.nu[0], fit.model.nu[1]);
  EXPECT_GE(fit.model.nu[1], fit.model.nu[2]);
  EXPECT_NEAR(fit.model.nu.sum(), 1.0, 1e-12);
}

TEST(EmFit, SelectedStartHasBestLikelihood) {
  const auto data = sample_dataset(separated_truth(), 500, 3);
  const FitResult fit = em_fit(data, 3, quick_config());
  const auto& lls = fit.diagnostics.start_log_likelihoods;
  ASSERT_EQ(lls.size(), 5u);
  for (double v : lls) EXPECT_LE(v, fit.model.log_likelihood);
  EXPECT_EQ(lls[static_cast<std::size_t>(fit.diagnostics.start_index_selected)], fit.model.log_likelihood);
  EXPECT_NEAR(log_likelihood(data, fit.model), fit.model.log_likelihood, 1e-9);
}

TEST(EmFit, DeterministicAndThreadInvariant) {
  const auto data = sample_dataset(separated_truth(), 400, 4);
  EmConfig c = quick_config();
  const FitResult a = em_fit(data, 3, c);
  const FitResult b = em_fit(data, 3, c);
  c.threads = 3;
  const FitResult t = em_fit(data, 3, c);
  EXPECT_EQ(a.model.beta, b.model.beta);
  EXPECT_EQ(a.model.nu, b.model.nu);
  EXPECT_EQ(a.model.beta, t.model.beta);
  EXPECT_EQ(a.model.log_likelihood, t.model.log_likelihood);
}

TEST(EmFit, SingleClassIsColumnMeans) {
  const auto data = BinaryResponseMatrix::from_rows({{1, 0}, {1, 1}, {0, 0}, {1, 0}});
  const FitResult fit = em_fit(data, 1, quick_config());
  EXPECT_DOUBLE_EQ(fit.model.beta(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(fit.model.beta(1, 0), 0.25);
  EXPECT_DOUBLE_EQ(fit.model.nu[0], 1.0);
  EXPECT_EQ(fit.diagnostics.iterations_used, 1);
  EXPECT_NEAR(fit.model.log_likelihood, 3 * std::log(0.75) + std::log(0.25) + std::log(0.25) + 3 * std::log(0.75),
              1e-12);
}

TEST(EmFit, ArgumentErrors) {
  const auto data = BinaryResponseMatrix::from_rows({{1, 0}, {0, 1}});
  EXPECT_THROW(em_fit(data, 0, quick_config()), Error);
  EXPECT_THROW(em_fit(data, 3, quick_config()), Error);
  EmConfig bad = quick_config();
  bad.tolerance = 0.0;
  try {
    em_fit(data, 1, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(EmFit, IterationCapReportsNonConvergence) {
  const auto data = sample_dataset(separated_truth(), 300, 5);
  EmConfig c = quick_config();
  c.max_iterations = 2;
  c.tolerance = 1e-12;
  const FitResult fit = em_fit(data, 3, c);
  EXPECT_FALSE(fit.diagnostics.converged);
  EXPECT_EQ(fit.diagnostics.iterations_used, 2);
}

TEST(EmFit, EmptyClassIsReseeded) {
  // Duplicate rows and more classes than distinct patterns push some class
  // weights toward zero; the fit must stay finite either way.
  const auto data = BinaryResponseMatrix::from_rows({{1, 1}, {1, 1}, {1, 1}, {1, 1}, {0, 0}});
  EmConfig c = quick_config();
  const FitResult fit = em_fit(data, 4, c);
  EXPECT_TRUE(std::isfinite(fit.model.log_likelihood));
  EXPECT_NEAR(fit.model.nu.sum(), 1.0, 1e-12);
}

TEST(SelectNumClasses, PicksTrueKOnClearData) {
  const auto data = sample_dataset(separated_truth(), 1500, 6);
  const auto sel = select_num_classes(data, 1, 5, quick_config());
  EXPECT_EQ(sel.selected_k, 3);
  ASSERT_EQ(sel.bic_trace.size(), 5u);
  EXPECT_EQ(sel.selected_fit().model.k(), 3);
  for (const auto& [k, v] : sel.bic_trace) {
    const auto& fit = sel.fits[static_cast<std::size_t>(k - 1)];
    EXPECT_NEAR(v, bic(data, fit.model), 1e-6);
  }
}

TEST(SelectNumClasses, BadRange) {
  const auto data = BinaryResponseMatrix::from_rows({{1, 0}, {0, 1}});
  EXPECT_THROW(select_num_classes(data, 3, 2, quick_config()), Error);
  EXPECT_THROW(select_num_classes(data, 0, 2, quick_config()), Error);
}
