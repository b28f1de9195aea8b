#include <gtest/gtest.h>

#include <sstream>

#include "slca/pipeline.hpp"
#include "slca/simulation.hpp"

using namespace slca;

namespace {

LcaModel small_truth() {
  LcaModel m;
  m.nu = Vector(3);
  m.nu << 0.4, 0.35, 0.25;
  m.beta = Matrix(8, 3);
  m.beta << 0.15, 0.15, 0.85,
            0.8, 0.2, 0.2,
            0.2, 0.5, 0.85,
            0.3, 0.3, 0.3,
            0.9, 0.9, 0.1,
            0.1, 0.9, 0.1,
            0.85, 0.1, 0.5,
            0.1, 0.1, 0.9;
  return m;
}

PipelineConfig fixed_k(int k) {
  PipelineConfig c;
  c.k = k;
  c.em.n_starts = 5;
  return c;
}

// Average linkage by brute force: cluster distance is the mean over all
// leaf pairs of the original distances.
std::vector<int> brute_force_average_linkage(const Matrix& rows) {
  std::vector<std::vector<int>> clusters;
  for (Index i = 0; i < rows.rows(); ++i) clusters.push_back({static_cast<int>(i)});
  while (clusters.size() > 1) {
    std::size_t ba = 0, bb = 1;
    double best = 1e300;
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double s = 0.0;
        for (int x : clusters[a]) {
          for (int y : clusters[b]) s += (rows.row(x) - rows.row(y)).norm();
        }
        s /= static_cast<double>(clusters[a].size() * clusters[b].size());
        if (s < best - 1e-12) {
          best = s;
          ba = a;
          bb = b;
        }
      }
    }
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
  }
  return clusters.front();
}

}  // namespace

TEST(Clustering, MatchesBruteForceAverageLinkage) {
  Rng rng(51);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix rows(9, 4);
    for (Index i = 0; i < rows.rows(); ++i) {
      for (Index c = 0; c < rows.cols(); ++c) rows(i, c) = rng.uniform();
    }
    EXPECT_EQ(average_linkage(rows).leaf_order, brute_force_average_linkage(rows));
  }
}

TEST(Clustering, ObviousGroups) {
  Matrix rows(4, 1);
  rows << 0.0, 10.0, 0.1, 10.2;
  const auto d = average_linkage(rows);
  EXPECT_EQ(d.leaf_order, (std::vector<int>{0, 2, 1, 3}));
  ASSERT_EQ(d.merges.size(), 3u);
  EXPECT_NEAR(d.merges[0].height, 0.1, 1e-12);
  EXPECT_NEAR(d.merges[2].height, (10.0 + 10.2 + 9.9 + 10.1) / 4.0, 1e-12);
}

TEST(ClassOrder, AscendingAverage) {
  Matrix b(2, 3);
  b << 0.9, 0.1, 0.5,
       0.7, 0.3, 0.5;
  EXPECT_EQ(class_presentation_order(b), (std::vector<int>{1, 2, 0}));
}

TEST(Pipeline, RecoversSmallStructure) {
  const LcaModel truth = small_truth();
  const auto data = sample_dataset(truth, 3000, 52);
  const auto out = run_pipeline(data, fixed_k(3));
  ASSERT_EQ(out.refinement.size(), 8u);
  const std::vector<int> expected_m{2, 2, 3, 1, 2, 2, 3, 2};
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(out.refinement[j].selected_m, expected_m[j]) << "item " << j;
  EXPECT_EQ(out.final_model.free_parameter_count, 2 + 2 + 2 + 3 + 1 + 2 + 2 + 3 + 2);
  for (Index j = 0; j < 8; ++j) {
    for (Index c = 0; c < 3; ++c) EXPECT_TRUE(std::isfinite(out.final_model.se_beta(j, c)));
  }
  const Alignment a = mse_beta_aligned(out.final_model.base.beta, truth.beta);
  EXPECT_LT(a.mse, 2e-3);
}

TEST(Pipeline, SingleClassDegenerates) {
  LcaModel m;
  m.nu = Vector::Ones(1);
  m.beta = Matrix(3, 1);
  m.beta << 0.2, 0.5, 0.7;
  const auto data = sample_dataset(m, 500, 53);
  const auto out = run_pipeline(data, fixed_k(1));
  for (const auto& r : out.refinement) EXPECT_EQ(r.selected_m, 1);
  for (Index j = 0; j < 3; ++j) EXPECT_NEAR(out.final_model.base.beta(j, 0), data.item(j).mean(), 1e-12);
}

TEST(Pipeline, SelectsKWhenNotFixed) {
  const auto data = sample_dataset(small_truth(), 2000, 54);
  PipelineConfig c;
  c.k_min = 1;
  c.k_max = 4;
  c.em.n_starts = 5;
  const auto out = run_pipeline(data, c);
  EXPECT_EQ(out.bic_trace.size(), 4u);
  EXPECT_EQ(out.final_model.base.k(), 3);
  EXPECT_TRUE(pipeline_document(out).contains("bic_trace"));
}

TEST(Pipeline, DocumentIsDeterministic) {
  const auto data = sample_dataset(small_truth(), 600, 55);
  const auto a = pipeline_document(run_pipeline(data, fixed_k(3))).dump();
  const auto b = pipeline_document(run_pipeline(data, fixed_k(3))).dump();
  EXPECT_EQ(a, b);
  const Json doc = Json::parse(a);
  EXPECT_EQ(doc["schema_version"], kSchemaVersion);
  EXPECT_EQ(doc["refinement"].size(), 8u);
}

TEST(Pipeline, StageErrorCarriesPartialState) {
  const auto data = sample_dataset(small_truth(), 50, 56);
  PipelineConfig c = fixed_k(3);
  c.ebic.rho = 0.5;
  try {
    run_pipeline(data, c);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "config");
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    EXPECT_EQ(e.partial()["completed_through"], "none");
  }
  c = fixed_k(60);
  try {
    run_pipeline(data, c);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "em_fit");
    EXPECT_EQ(e.partial()["completed_through"], "select_k");
  }
}

TEST(Heatmap, RowsMatchFinalBeta) {
  LcaModel m;
  m.nu = Vector(2);
  m.nu << 0.5, 0.5;
  m.beta = Matrix(2, 2);
  m.beta << 0.8, 0.2, 0.3, 0.9;
  const auto data = sample_dataset(m, 1500, 57);
  const auto out = run_pipeline(data, fixed_k(2));
  std::istringstream in(heatmap_table(out));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "item_label,class_label,value,item_cluster_position,class_position");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string item, cls, value, ipos, cpos;
    std::getline(ss, item, ',');
    std::getline(ss, cls, ',');
    std::getline(ss, value, ',');
    std::getline(ss, ipos, ',');
    std::getline(ss, cpos, ',');
    const Index j = std::stoi(item.substr(4)) - 1;
    const Index c = std::stoi(cls.substr(5)) - 1;
    EXPECT_EQ(std::stod(value), out.final_model.base.beta(j, c));
    EXPECT_EQ(out.item_clusters.leaf_order[static_cast<std::size_t>(std::stoi(ipos) - 1)], j);
    EXPECT_EQ(out.class_order[static_cast<std::size_t>(std::stoi(cpos) - 1)], c);
    ++rows;
  }
  EXPECT_EQ(rows, 4);
}
