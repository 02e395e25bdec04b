#include "prefalign/envlab.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "prefalign/alignment.hpp"
#include "prefalign/datalab.hpp"
#include "prefalign/errors.hpp"

namespace prefalign {

const char* action_name(Action a) noexcept {
  switch (a) {
    case Action::Up:
      return "up";
    case Action::Down:
      return "down";
    case Action::Left:
      return "left";
    case Action::Right:
      return "right";
  }
  return "?";
}

const char* feature_name(Feature f) noexcept {
  switch (f) {
    case Feature::ReachedGoal:
      return "reached_goal";
    case Feature::EnteredHazard:
      return "entered_hazard";
    case Feature::StepTaken:
      return "step_taken";
    case Feature::MovedTowardGoal:
      return "moved_toward_goal";
    case Feature::MovedAwayFromGoal:
      return "moved_away_from_goal";
    case Feature::WallBump:
      return "wall_bump";
  }
  return "?";
}

std::vector<Feature> standard_features() {
  return {Feature::ReachedGoal,     Feature::EnteredHazard,     Feature::StepTaken,
          Feature::MovedTowardGoal, Feature::MovedAwayFromGoal, Feature::WallBump};
}

std::vector<Feature> parse_feature_set(const std::string& spec) {
  if (spec == "standard") return standard_features();
  std::vector<Feature> out;
  std::stringstream ss(spec);
  std::string name;
  while (std::getline(ss, name, ',')) {
    bool found = false;
    for (Feature f : standard_features()) {
      if (name == feature_name(f)) {
        if (std::find(out.begin(), out.end(), f) != out.end()) {
          throw ParseError("feature '" + name + "' listed twice");
        }
        out.push_back(f);
        found = true;
      }
    }
    if (!found) throw ParseError("unknown feature '" + name + "'");
  }
  if (out.empty()) throw ParseError("empty feature set");
  return out;
}

Gridworld::Gridworld(std::vector<std::string> rows, std::vector<Feature> features, double gamma,
                     double slip, std::size_t max_steps)
    : features_(std::move(features)), gamma_(gamma), slip_(slip), max_steps_(max_steps) {
  if (rows.empty() || rows.front().empty()) throw ValidationError("gridworld has no cells");
  height_ = static_cast<int>(rows.size());
  width_ = static_cast<int>(rows.front().size());
  if (features_.empty()) throw ValidationError("gridworld needs at least one feature");
  if (!(gamma_ >= 0.0 && gamma_ <= 1.0)) throw ValidationError("gridworld gamma must lie in [0, 1]");
  if (!(slip_ >= 0.0 && slip_ <= 1.0)) throw ValidationError("gridworld slip must lie in [0, 1]");
  if (max_steps_ < 1) throw ValidationError("gridworld max_steps must be at least 1");

  bool has_goal = false;
  for (int r = 0; r < height_; ++r) {
    if (static_cast<int>(rows[r].size()) != width_) {
      throw ValidationError("gridworld row " + std::to_string(r) + " has width " +
                            std::to_string(rows[r].size()) + ", expected " +
                            std::to_string(width_));
    }
    for (int c = 0; c < width_; ++c) {
      switch (rows[r][c]) {
        case '.':
          terrain_.push_back(Terrain::Empty);
          break;
        case 'S':
          terrain_.push_back(Terrain::Empty);
          starts_.push_back(terrain_.size() - 1);
          break;
        case 'G':
          terrain_.push_back(Terrain::Goal);
          has_goal = true;
          break;
        case 'H':
          terrain_.push_back(Terrain::Hazard);
          break;
        case '#':
          terrain_.push_back(Terrain::Wall);
          break;
        default:
          throw ValidationError(std::string("gridworld: unknown cell character '") + rows[r][c] +
                                "'");
      }
    }
  }
  if (!has_goal) throw ValidationError("gridworld needs at least one goal cell");
  if (starts_.empty()) throw ValidationError("gridworld needs at least one start cell");

  // Multi-source BFS from every goal through non-wall cells.
  goal_distance_.assign(terrain_.size(), -1);
  std::deque<std::size_t> frontier;
  for (std::size_t s = 0; s < terrain_.size(); ++s) {
    if (terrain_[s] == Terrain::Goal) {
      goal_distance_[s] = 0;
      frontier.push_back(s);
    }
  }
  while (!frontier.empty()) {
    const std::size_t s = frontier.front();
    frontier.pop_front();
    for (Action a : kActions) {
      const std::size_t n = move(s, a);
      if (n != s && goal_distance_[n] < 0) {
        goal_distance_[n] = goal_distance_[s] + 1;
        frontier.push_back(n);
      }
    }
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Gridworld Gridworld::parse(std::istream& in) {
  std::map<std::string, std::string> header;
  std::vector<std::string> rows;
  std::string line;
  std::size_t lineno = 0;
  bool in_grid = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (!in_grid) {
      if (t.empty() || t[0] == '#') continue;
      if (t == "---") {
        in_grid = true;
        continue;
      }
      const auto colon = t.find(':');
      if (colon == std::string::npos) {
        throw ParseError("line " + std::to_string(lineno) + ": expected 'key: value'", lineno);
      }
      header[trim(t.substr(0, colon))] = trim(t.substr(colon + 1));
    } else if (!t.empty()) {
      rows.push_back(t);
    }
  }
  if (!in_grid) throw ParseError("world file has no '---' grid separator");
  if (rows.empty()) throw ParseError("world file has an empty grid");

  auto number = [&](const std::string& key, const std::string& fallback) {
    auto it = header.find(key);
    const std::string& text = it == header.end() ? fallback : it->second;
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw ParseError("header '" + key + "' is not a number: " + text);
    }
  };
  const double gamma = number("gamma", "0.95");
  const double slip = number("slip", "0");
  const double max_steps = number("max_steps", "50");
  auto features_it = header.find("features");
  auto features = parse_feature_set(features_it == header.end() ? "standard" : features_it->second);
  if (header.count("width") && number("width", "0") != static_cast<double>(rows.front().size())) {
    throw ParseError("header width does not match the grid");
  }
  if (header.count("height") && number("height", "0") != static_cast<double>(rows.size())) {
    throw ParseError("header height does not match the grid");
  }
  if (max_steps < 1 || max_steps != std::floor(max_steps)) {
    throw ParseError("max_steps must be a positive integer");
  }
  try {
    return Gridworld(std::move(rows), std::move(features), gamma, slip,
                     static_cast<std::size_t>(max_steps));
  } catch (const ValidationError& e) {
    throw ParseError(e.what());
  }
}

Gridworld Gridworld::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open world file '" + path.string() + "'");
  try {
    return parse(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

namespace {

constexpr const char* kOpenRoomText = R"(# 7x7 open room with a diagonal wall segment; two starts, one goal.
width: 7
height: 7
gamma: 0.95
slip: 0
max_steps: 40
features: standard
---
S......
.......
..#....
...#...
....#..
.......
S.....G
)";

constexpr const char* kHazardCorridorText = R"(# 5x5 corridor: the bottom row runs along a band of hazards; slipping
# sideways off the corridor ends the episode. The detour goes through row 2.
width: 5
height: 5
gamma: 0.95
slip: 0.2
max_steps: 40
features: standard
---
.....
.....
.....
.HHH.
S...G
)";

}  // namespace

Gridworld open_room_fixture() {
  std::istringstream in(kOpenRoomText);
  return Gridworld::parse(in);
}

Gridworld hazard_corridor_fixture() {
  std::istringstream in(kHazardCorridorText);
  return Gridworld::parse(in);
}

std::string Gridworld::to_text() const {
  std::ostringstream out;
  out << "width: " << width_ << "\nheight: " << height_ << "\ngamma: " << gamma_
      << "\nslip: " << slip_ << "\nmax_steps: " << max_steps_ << "\nfeatures: ";
  for (std::size_t i = 0; i < features_.size(); ++i) {
    out << (i ? "," : "") << feature_name(features_[i]);
  }
  out << "\n---\n";
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) {
      const std::size_t s = index({r, c});
      char ch = '.';
      switch (terrain_[s]) {
        case Terrain::Goal:
          ch = 'G';
          break;
        case Terrain::Hazard:
          ch = 'H';
          break;
        case Terrain::Wall:
          ch = '#';
          break;
        case Terrain::Empty:
          ch = std::find(starts_.begin(), starts_.end(), s) != starts_.end() ? 'S' : '.';
          break;
      }
      out << ch;
    }
    out << '\n';
  }
  return out.str();
}

std::size_t Gridworld::move(std::size_t s, Action a, bool* bumped) const {
  Cell c = cell(s);
  switch (a) {
    case Action::Up:
      --c.row;
      break;
    case Action::Down:
      ++c.row;
      break;
    case Action::Left:
      --c.col;
      break;
    case Action::Right:
      ++c.col;
      break;
  }
  const bool blocked = c.row < 0 || c.row >= height_ || c.col < 0 || c.col >= width_ ||
                       terrain_[index(c)] == Terrain::Wall;
  if (bumped) *bumped = blocked;
  return blocked ? s : index(c);
}

FeatureVector Gridworld::transition_features(std::size_t from, std::size_t to, bool bumped) const {
  FeatureVector phi(features_.size(), 0.0);
  const int d0 = goal_distance_[from];
  const int d1 = goal_distance_[to];
  for (std::size_t k = 0; k < features_.size(); ++k) {
    switch (features_[k]) {
      case Feature::ReachedGoal:
        phi[k] = terrain_[to] == Terrain::Goal ? 1.0 : 0.0;
        break;
      case Feature::EnteredHazard:
        phi[k] = terrain_[to] == Terrain::Hazard ? 1.0 : 0.0;
        break;
      case Feature::StepTaken:
        phi[k] = 1.0;
        break;
      case Feature::MovedTowardGoal:
        phi[k] = (d0 >= 0 && d1 >= 0 && d1 < d0) ? 1.0 : 0.0;
        break;
      case Feature::MovedAwayFromGoal:
        phi[k] = (d0 >= 0 && d1 >= 0 && d1 > d0) ? 1.0 : 0.0;
        break;
      case Feature::WallBump:
        phi[k] = bumped ? 1.0 : 0.0;
        break;
    }
  }
  return phi;
}

std::vector<Transition> Gridworld::transitions(std::size_t s, Action a) const {
  std::vector<Transition> out;
  auto add = [&](Action dir, double p) {
    if (p <= 0.0) return;
    bool bumped = false;
    const std::size_t next = move(s, dir, &bumped);
    out.push_back({p, next, transition_features(s, next, bumped)});
  };
  add(a, 1.0 - slip_);
  const bool vertical = a == Action::Up || a == Action::Down;
  add(vertical ? Action::Left : Action::Up, slip_ / 2.0);
  add(vertical ? Action::Right : Action::Down, slip_ / 2.0);
  return out;
}

TabularPolicy TabularPolicy::constant(const Gridworld& world, Action a) {
  TabularPolicy p;
  p.action.assign(world.num_states(), a);
  p.values.assign(world.num_states(), 0.0);
  return p;
}

std::array<double, 4> TabularPolicy::distribution(std::size_t s, double exploration_rate) const {
  std::array<double, 4> probs;
  probs.fill(exploration_rate / 4.0);
  probs[static_cast<std::size_t>(action[s])] += 1.0 - exploration_rate;
  return probs;
}

namespace {

bool every_state_reaches_terminal(const Gridworld& world) {
  // Reverse reachability over transitions with positive probability.
  const std::size_t n = world.num_states();
  std::vector<std::vector<std::size_t>> preds(n);
  for (std::size_t s = 0; s < n; ++s) {
    if (world.terrain(s) == Terrain::Wall || world.terminal(s)) continue;
    for (Action a : kActions) {
      for (const auto& t : world.transitions(s, a)) preds[t.next].push_back(s);
    }
  }
  std::vector<bool> reach(n, false);
  std::deque<std::size_t> frontier;
  for (std::size_t s = 0; s < n; ++s) {
    if (world.terminal(s)) {
      reach[s] = true;
      frontier.push_back(s);
    }
  }
  while (!frontier.empty()) {
    const std::size_t s = frontier.front();
    frontier.pop_front();
    for (std::size_t p : preds[s]) {
      if (!reach[p]) {
        reach[p] = true;
        frontier.push_back(p);
      }
    }
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (world.terrain(s) != Terrain::Wall && !reach[s]) return false;
  }
  return true;
}

}  // namespace

TabularPolicy value_iteration(const Gridworld& world, const LinearRewardModel& model, double tol,
                              std::size_t max_sweeps) {
  require_same_dim(world.dim(), model.dim(), "value_iteration");
  if (!(tol > 0.0)) throw InvalidArgument("value_iteration: tol must be positive");
  const double gamma = world.gamma();
  if (gamma >= 1.0 && !every_state_reaches_terminal(world)) {
    throw InvalidArgument(
        "value_iteration: gamma = 1 with states that can never terminate; values diverge");
  }

  const std::size_t n = world.num_states();
  // Cache expected immediate reward and successor lists per (s, a).
  struct Outcome {
    double probability;
    std::size_t next;
  };
  std::vector<std::array<double, 4>> reward(n);
  std::vector<std::array<std::vector<Outcome>, 4>> outcomes(n);
  for (std::size_t s = 0; s < n; ++s) {
    if (world.terrain(s) == Terrain::Wall || world.terminal(s)) continue;
    for (Action a : kActions) {
      const auto ai = static_cast<std::size_t>(a);
      reward[s][ai] = 0.0;
      for (const auto& t : world.transitions(s, a)) {
        reward[s][ai] += t.probability * dot(model.weights(), t.features);
        outcomes[s][ai].push_back({t.probability, t.next});
      }
    }
  }

  auto q_value = [&](const std::vector<double>& v, std::size_t s, std::size_t ai) {
    double q = reward[s][ai];
    for (const auto& o : outcomes[s][ai]) q += gamma * o.probability * v[o.next];
    return q;
  };

  TabularPolicy policy = TabularPolicy::constant(world, Action::Up);
  std::vector<double> next(n, 0.0);
  bool converged = false;
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double residual = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      if (world.terrain(s) == Terrain::Wall || world.terminal(s)) {
        next[s] = 0.0;
        continue;
      }
      double best = q_value(policy.values, s, 0);
      for (std::size_t ai = 1; ai < 4; ++ai) best = std::max(best, q_value(policy.values, s, ai));
      next[s] = best;
      residual = std::max(residual, std::abs(best - policy.values[s]));
    }
    policy.values.swap(next);
    policy.residuals.push_back(residual);
    policy.sweeps = sweep + 1;
    if (residual < tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw Error("not_converged", "value_iteration did not converge within " +
                                     std::to_string(max_sweeps) + " sweeps");
  }

  // Greedy extraction; near-equal Q-values (relative to their magnitude)
  // resolve to the earliest action in kActions.
  for (std::size_t s = 0; s < n; ++s) {
    if (world.terrain(s) == Terrain::Wall || world.terminal(s)) continue;
    std::array<double, 4> q;
    double best = -std::numeric_limits<double>::infinity();
    double scale = 0.0;
    for (std::size_t ai = 0; ai < 4; ++ai) {
      q[ai] = q_value(policy.values, s, ai);
      best = std::max(best, q[ai]);
      scale = std::max(scale, std::abs(q[ai]));
    }
    const double slack = 1e-9 * scale;
    for (std::size_t ai = 0; ai < 4; ++ai) {
      if (q[ai] >= best - slack) {
        policy.action[s] = kActions[ai];
        break;
      }
    }
  }
  return policy;
}

Episode simulate_episode(const Gridworld& world, const TabularPolicy& policy,
                         double exploration_rate, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick_start(0, world.starts().size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_action(0, 3);

  Episode ep;
  ep.start = world.starts()[pick_start(rng)];
  std::size_t s = ep.start;
  for (std::size_t t = 0; t < world.max_steps() && !world.terminal(s); ++t) {
    const bool explore = unit(rng) < exploration_rate;
    const int random_action = pick_action(rng);
    const Action a = explore ? static_cast<Action>(random_action) : policy.action[s];
    const auto outcomes = world.transitions(s, a);
    double u = unit(rng);
    const Transition* chosen = &outcomes.back();
    for (const auto& o : outcomes) {
      if (u < o.probability) {
        chosen = &o;
        break;
      }
      u -= o.probability;
    }
    ep.actions.push_back(a);
    ep.steps.push_back(chosen->features);
    s = chosen->next;
  }
  ep.final_state = s;
  ep.reached_goal = world.terrain(s) == Terrain::Goal;
  return ep;
}

std::vector<Episode> rollout_episodes(const Gridworld& world, const TabularPolicy& policy,
                                      double exploration_rate, std::uint64_t seed,
                                      std::size_t count) {
  if (count < 1) throw InvalidArgument("rollout: count must be at least 1");
  if (!(exploration_rate >= 0.0 && exploration_rate <= 1.0)) {
    throw InvalidArgument("rollout: exploration_rate must lie in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(simulate_episode(world, policy, exploration_rate, rng));
  }
  return out;
}

std::vector<Trajectory> rollout(const Gridworld& world, const TabularPolicy& policy,
                                double exploration_rate, std::uint64_t seed, std::size_t count,
                                const std::string& id_prefix) {
  std::vector<Trajectory> out;
  const auto episodes = rollout_episodes(world, policy, exploration_rate, seed, count);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    const char* outcome = ep.reached_goal ? "goal"
                          : world.terrain(ep.final_state) == Terrain::Hazard ? "hazard"
                                                                              : "timeout";
    std::ostringstream rate;
    rate << exploration_rate;
    out.emplace_back(id_prefix + "-" + std::to_string(i), ep.steps,
                     Metadata{{"source", "rollout"}, {"outcome", outcome}, {"exploration", rate.str()}});
  }
  return out;
}

double success_rate(const Gridworld& world, const TabularPolicy& policy, std::size_t episodes,
                    std::uint64_t seed, double exploration_rate) {
  if (episodes < 1) throw InvalidArgument("success_rate: episodes must be at least 1");
  const auto eps = rollout_episodes(world, policy, exploration_rate, seed, episodes);
  const auto hits = std::count_if(eps.begin(), eps.end(), [](const Episode& e) { return e.reached_goal; });
  return static_cast<double>(hits) / static_cast<double>(episodes);
}

namespace {

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

}  // namespace

PreferenceDataset expert_preferences(const Gridworld& world,
                                     const std::vector<double>& expert_weights,
                                     const PipelineConfig& config) {
  const LinearRewardModel expert(expert_weights, world.gamma());
  const TabularPolicy expert_policy = stage("plan-expert", [&] {
    return value_iteration(world, expert, config.planner_tol);
  });

  std::vector<Trajectory> trajectories = stage("rollout", [&] {
    std::vector<Trajectory> all;
    for (std::size_t i = 0; i < config.exploration_rates.size(); ++i) {
      auto batch = rollout(world, expert_policy, config.exploration_rates[i],
                           config.seed * 7919 + i, config.rollouts_per_rate,
                           "e" + std::to_string(i));
      for (auto& t : batch) all.push_back(std::move(t));
    }
    return all;
  });

  return stage("label", [&] {
    const LinearRewardModel labeler(expert_weights, config.train.gamma);
    std::vector<double> returns;
    for (const auto& t : trajectories) returns.push_back(discounted_return(labeler, t));
    // Candidate pairs with a strict expert preference; identical returns
    // cannot be separated by any reward and are left out.
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t a = 0; a < trajectories.size(); ++a) {
      for (std::size_t b = a + 1; b < trajectories.size(); ++b) {
        if (std::abs(returns[a] - returns[b]) > 1e-9) candidates.emplace_back(a, b);
      }
    }
    if (candidates.size() < config.num_preferences) {
      throw InvalidArgument("only " + std::to_string(candidates.size()) +
                            " distinguishable trajectory pairs, " +
                            std::to_string(config.num_preferences) + " requested");
    }
    std::mt19937_64 rng(config.seed * 104729 + 17);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    std::bernoulli_distribution swap(0.5);
    std::vector<PreferenceRecord> records;
    for (std::size_t k = 0; k < config.num_preferences; ++k) {
      auto [i, j] = candidates[k];
      if (swap(rng)) std::swap(i, j);
      records.push_back({trajectories[i].id(), trajectories[j].id(),
                         verdict_for(returns[i] - returns[j], 0.0)});
    }
    return PreferenceDataset(std::move(trajectories), std::move(records));
  });
}

EndToEndReport end_to_end(const Gridworld& world, const std::vector<double>& expert_weights,
                          const PipelineConfig& config) {
  require_same_dim(world.dim(), expert_weights.size(), "end_to_end: expert weights");
  EndToEndReport report;
  report.expert_weights = expert_weights;

  const PreferenceDataset clean = expert_preferences(world, expert_weights, config);
  report.num_trajectories = clean.trajectories().size();
  report.num_preferences = clean.size();

  const PreferenceDataset training = stage("label", [&] {
    if (config.label_noise <= 0.0) return clean;
    return corrupt_labels(clean, NoiseSpec::uniform(config.label_noise, config.seed + 1)).dataset;
  });

  report.run = stage("train", [&] {
    if (!config.grid_learning_rates.empty() && !config.grid_batch_sizes.empty()) {
      return grid_search(training, config.grid_learning_rates, config.grid_batch_sizes,
                         config.train)
          .best();
    }
    return train(training, config.train);
  });
  report.learned_weights = report.run.final_weights;
  report.learned_train_tac = report.run.best.tac.value_or(0.0);

  const LinearRewardModel learned(report.learned_weights, world.gamma());
  const TabularPolicy learned_policy =
      stage("plan", [&] { return value_iteration(world, learned, config.planner_tol); });
  const TabularPolicy expert_policy = stage("plan-expert", [&] {
    return value_iteration(world, LinearRewardModel(expert_weights, world.gamma()),
                           config.planner_tol);
  });

  stage("evaluate", [&] {
    const AlignmentCounts counts = alignment_counts(compile_pairs(clean, config.train.gamma),
                                                    report.learned_weights);
    report.learned_tac = counts.defined() ? counts.tau_b() : 0.0;
    report.learned_success =
        success_rate(world, learned_policy, config.eval_episodes, config.seed + 2);
    report.expert_success =
        success_rate(world, expert_policy, config.eval_episodes, config.seed + 2);
    return 0;
  });
  return report;
}

}  // namespace prefalign
