#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefalign/losses.hpp"
#include "prefalign/reward_core.hpp"

namespace prefalign {

enum class OptimizerKind { Adam, Sgd };

const char* optimizer_name(OptimizerKind kind) noexcept;
OptimizerKind parse_optimizer_kind(const std::string& name);

struct TrainConfig {
  LossKind loss = LossKind::SoftTAC;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double alpha = 1.0;
  double learning_rate = 0.01;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 500;
  std::size_t patience = 50;
  double loss_delta = 1e-4;
  std::optional<double> clip_low;
  std::optional<double> clip_high;
  std::uint64_t seed = 0;
  double gamma = 1.0;
  double tie_epsilon = 0.0;
  // Overrides the N(0, 1) draw when set (still clamped).
  std::optional<std::vector<double>> initial_weights;
  // Fraction of records held out for early-stopping metrics; 0 uses the
  // training records themselves.
  double validation_fraction = 0.0;
  bool shuffle = true;

  void validate() const;
};

// Standard Adam moments; bias-corrected update.
struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  explicit AdamState(std::size_t dim) : first_moment(dim, 0.0), second_moment(dim, 0.0) {}

  void apply(std::span<double> weights, std::span<const double> gradient, double learning_rate);
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::optional<double> tac;  // absent when Tau-b is undefined for these weights
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<double> weights;
};

enum class StopReason { EarlyStop, MaxEpochs };
const char* stop_reason_name(StopReason reason) noexcept;

struct TrainRun {
  TrainConfig config;
  EpochMetrics initial;                  // epoch 0, before any update
  std::vector<EpochMetrics> epoch_trace; // epochs 1..stopped_at_epoch
  EpochMetrics best;
  std::vector<double> final_weights;     // == best.weights
  std::size_t stopped_at_epoch = 0;
  StopReason stop_reason = StopReason::MaxEpochs;
};

// i.i.d. N(0, 1) from a generator seeded with `seed`, clamped to the bounds.
std::vector<double> init_weights(std::size_t dim, std::uint64_t seed,
                                 std::optional<double> clip_low = std::nullopt,
                                 std::optional<double> clip_high = std::nullopt);

// Early-stopping acceptance: TAC did not drop and either accuracy rose or
// loss fell by more than `loss_delta`.
bool improves_on(const EpochMetrics& candidate, const EpochMetrics& best, double loss_delta);

TrainRun train(const PreferenceDataset& data, const TrainConfig& config);

struct GridCell {
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  std::optional<TrainRun> run;
  std::string error;  // set when the cell failed
};

struct GridResult {
  std::vector<GridCell> cells;  // learning-rate major, in the order given
  std::size_t best_index = 0;

  const TrainRun& best() const { return *cells.at(best_index).run; }
};

// Ranking used to pick the winning cell: higher TAC, then higher accuracy,
// then lower loss, then smaller learning rate, then smaller batch.
bool cell_ranks_before(const GridCell& a, const GridCell& b);

GridResult grid_search(const PreferenceDataset& data, std::span<const double> learning_rates,
                       std::span<const std::size_t> batch_sizes, const TrainConfig& base);

// Learning rates swept for reward learning in the reference protocol.
inline constexpr double kProtocolLearningRates[] = {0.01, 0.03, 0.05, 0.0001, 0.0003, 0.0005};

}  // namespace prefalign
