#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "prefalign/reward_core.hpp"
#include "prefalign/trainer.hpp"

namespace prefalign {

enum class Terrain { Empty, Goal, Hazard, Wall };

// Greedy ties are broken in this order.
enum class Action : std::uint8_t { Up = 0, Down = 1, Left = 2, Right = 3 };
inline constexpr std::array<Action, 4> kActions{Action::Up, Action::Down, Action::Left,
                                                Action::Right};
const char* action_name(Action a) noexcept;

// Per-transition indicator features.
enum class Feature {
  ReachedGoal,
  EnteredHazard,
  StepTaken,
  MovedTowardGoal,
  MovedAwayFromGoal,
  WallBump,
};
const char* feature_name(Feature f) noexcept;
std::vector<Feature> parse_feature_set(const std::string& spec);
// All six, in enum order.
std::vector<Feature> standard_features();

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

struct Transition {
  double probability = 0.0;
  std::size_t next = 0;
  FeatureVector features;
};

// Deterministic grid with optional slip: the intended move happens with
// probability 1 - slip, each perpendicular move with slip / 2. Moving into a
// wall or off the grid leaves the agent in place. Goal and hazard cells are
// absorbing. Start cells are drawn uniformly.
class Gridworld {
 public:
  Gridworld(std::vector<std::string> rows, std::vector<Feature> features, double gamma,
            double slip, std::size_t max_steps);

  static Gridworld parse(std::istream& in);
  static Gridworld load(const std::filesystem::path& path);
  std::string to_text() const;

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t num_states() const noexcept { return terrain_.size(); }
  std::size_t dim() const noexcept { return features_.size(); }
  double gamma() const noexcept { return gamma_; }
  double slip() const noexcept { return slip_; }
  std::size_t max_steps() const noexcept { return max_steps_; }
  const std::vector<Feature>& features() const noexcept { return features_; }
  const std::vector<std::size_t>& starts() const noexcept { return starts_; }

  std::size_t index(Cell c) const noexcept { return static_cast<std::size_t>(c.row * width_ + c.col); }
  Cell cell(std::size_t s) const noexcept {
    return {static_cast<int>(s) / width_, static_cast<int>(s) % width_};
  }
  Terrain terrain(std::size_t s) const noexcept { return terrain_[s]; }
  bool terminal(std::size_t s) const noexcept {
    return terrain_[s] == Terrain::Goal || terrain_[s] == Terrain::Hazard;
  }
  // Shortest walking distance to a goal ignoring hazards; -1 if unreachable.
  int goal_distance(std::size_t s) const noexcept { return goal_distance_[s]; }

  // Outcome distribution of taking `a` in non-terminal, non-wall state `s`.
  std::vector<Transition> transitions(std::size_t s, Action a) const;
  // Deterministic move in direction `a` (ignoring slip); also reports a bump.
  std::size_t move(std::size_t s, Action a, bool* bumped = nullptr) const;
  FeatureVector transition_features(std::size_t from, std::size_t to, bool bumped) const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Terrain> terrain_;
  std::vector<std::size_t> starts_;
  std::vector<int> goal_distance_;
  std::vector<Feature> features_;
  double gamma_;
  double slip_;
  std::size_t max_steps_;
};

// The two shipped fixtures (data/worlds/open7.world, hazard5.world), built
// from embedded copies so callers need no working directory.
Gridworld open_room_fixture();
Gridworld hazard_corridor_fixture();

struct TabularPolicy {
  std::vector<Action> action;  // meaningful for non-terminal, non-wall states
  std::vector<double> values;
  std::vector<double> residuals;  // sup-norm change per sweep
  std::size_t sweeps = 0;

  static TabularPolicy constant(const Gridworld& world, Action a);
  // epsilon-greedy action distribution at state s (sums to 1).
  std::array<double, 4> distribution(std::size_t s, double exploration_rate) const;
};

// Sweeps until the sup-norm Bellman residual drops below `tol`. gamma = 1 is
// accepted only when every non-wall state can reach a terminal cell.
TabularPolicy value_iteration(const Gridworld& world, const LinearRewardModel& model,
                              double tol = 1e-10, std::size_t max_sweeps = 100000);

struct Episode {
  std::vector<FeatureVector> steps;
  std::vector<Action> actions;  // chosen (before slip)
  std::size_t start = 0;
  std::size_t final_state = 0;
  bool reached_goal = false;
};

Episode simulate_episode(const Gridworld& world, const TabularPolicy& policy,
                         double exploration_rate, std::mt19937_64& rng);

std::vector<Episode> rollout_episodes(const Gridworld& world, const TabularPolicy& policy,
                                      double exploration_rate, std::uint64_t seed,
                                      std::size_t count);

// Episodes with at least one step, as reward-core trajectories.
std::vector<Trajectory> rollout(const Gridworld& world, const TabularPolicy& policy,
                                double exploration_rate, std::uint64_t seed, std::size_t count,
                                const std::string& id_prefix = "roll");

// Fraction of episodes that end on a goal cell.
double success_rate(const Gridworld& world, const TabularPolicy& policy, std::size_t episodes,
                    std::uint64_t seed, double exploration_rate = 0.0);

struct PipelineConfig {
  std::vector<double> exploration_rates{0.0, 0.1, 0.25, 0.5, 0.75, 1.0};
  std::size_t rollouts_per_rate = 25;
  std::size_t num_preferences = 148;
  double label_noise = 0.0;  // uniform corruption of the expert labels
  TrainConfig train;
  // When both are non-empty a grid search replaces the single train call.
  std::vector<double> grid_learning_rates;
  std::vector<std::size_t> grid_batch_sizes;
  std::size_t eval_episodes = 100;
  double planner_tol = 1e-10;
  std::uint64_t seed = 0;
};

struct EndToEndReport {
  std::vector<double> expert_weights;
  std::vector<double> learned_weights;
  std::size_t num_trajectories = 0;
  std::size_t num_preferences = 0;
  double learned_tac = 0.0;        // learned weights vs the clean expert labels
  double learned_train_tac = 0.0;  // best TAC seen by the trainer (possibly noisy labels)
  double learned_success = 0.0;
  double expert_success = 0.0;
  TrainRun run;
};

// rollouts -> expert labels -> training -> planning -> evaluation. Failures
// are rethrown as StageError naming the stage.
EndToEndReport end_to_end(const Gridworld& world, const std::vector<double>& expert_weights,
                          const PipelineConfig& config);

// The labeled preference set end_to_end trains on (exposed for inspection).
PreferenceDataset expert_preferences(const Gridworld& world,
                                     const std::vector<double>& expert_weights,
                                     const PipelineConfig& config);

}  // namespace prefalign
