#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefalign/datalab.hpp"
#include "prefalign/envlab.hpp"
#include "prefalign/trainer.hpp"

// Bundled reproduction experiments. Every study is deterministic: seeds and
// settings are pinned below, and parallel work is aggregated in seed order.
namespace prefalign::studies {

struct Check {
  std::string name;
  std::string expected;
  std::string observed;
  bool pass = false;
};

struct Table {
  std::string name;  // used as the file stem when written to disk
  std::string tsv;   // header line plus rows
};

struct StudyReport {
  std::string name;
  std::vector<Check> checks;
  std::vector<Table> tables;
  double seconds = 0.0;

  bool passed() const;
};

const std::vector<std::string>& study_names();
// Throws InvalidArgument for an unknown name.
StudyReport run_study(const std::string& name);

StudyReport toy_noisy();
StudyReport toy_clean();
StudyReport convergence();
StudyReport realizable();
StudyReport noise_tolerance();
StudyReport ablation_count();
StudyReport ablation_length();
StudyReport gridworld_e2e();

// Settings shared with the tests.

// Plain per-sample SGD from w = 0: lr 0.1, batch 1, 40 epochs, alpha 1.
TrainConfig toy_config(LossKind loss);

// Realizable synthetic data with small per-step features and a margin under
// the true weights (drawn N(0, 1) from seed 1000 + seed).
SyntheticSpec property_data_spec(std::size_t dim, std::size_t num_preferences,
                                std::size_t num_trajectories, std::uint64_t seed);

// Adam, lr 0.05, batch 8, alpha 1.
TrainConfig property_train_config(LossKind loss, std::uint64_t seed, std::size_t max_epochs);

// Reward weights for the 7x7 fixture, in standard feature order.
std::vector<double> gridworld_expert_weights();

}  // namespace prefalign::studies
