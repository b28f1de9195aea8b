// Simulates a small three-class data set, runs the full analysis, and prints
// the selected level structure of each item.

#include <iostream>

#include "slca/slca.hpp"

int main() {
  slca::LcaModel truth;
  truth.nu = slca::Vector::Constant(3, 1.0 / 3.0);
  truth.beta.resize(6, 3);
  truth.beta << 0.2, 0.2, 0.8,
                0.1, 0.7, 0.7,
                0.2, 0.5, 0.8,
                0.85, 0.15, 0.15,
                0.3, 0.3, 0.3,
                0.75, 0.75, 0.2;
  const auto data = slca::sample_dataset(truth, 1500, 7);

  slca::PipelineConfig config;
  config.k = 3;
  const auto result = slca::run_pipeline(data, config);

  std::cout << "log-likelihood " << result.final_model.base.log_likelihood << "\n";
  std::cout << "class proportions " << result.final_model.base.nu.transpose() << "\n";
  for (const auto& item : result.refinement) {
    std::cout << data.item_labels()[static_cast<std::size_t>(item.item_index)] << ": " << item.selected_m
              << " level(s), blocks " << slca::to_json(item.selected_partition).dump() << "\n";
  }
  return 0;
}
