#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "prefalign/reward_core.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Line-oriented file formats.
//
// Trajectory file: a header object {"dim", "format", "gamma_default",
// "version"} followed by one {"id", "metadata", "steps"} object per line.
// Preference file: a header {"format", "trajectories", "version"} naming the
// trajectory file by path relative to the preference file, then one
// {"label", "left", "right"} object per line. Keys are written sorted, so
// writing the result of a parse reproduces the input byte for byte.
// ---------------------------------------------------------------------------

inline constexpr const char* kTrajectoryFormat = "prefalign.trajectories";
inline constexpr const char* kPreferenceFormat = "prefalign.preferences";
inline constexpr int kFormatVersion = 1;

struct TrajectoryFile {
  std::size_t dim = 0;
  double gamma_default = 1.0;
  std::vector<Trajectory> trajectories;
};

struct PreferenceFile {
  std::string trajectories_path;  // as written in the header
  std::vector<PreferenceRecord> records;
};

TrajectoryFile read_trajectories(std::istream& in);
void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories,
                        double gamma_default);
PreferenceFile read_preferences(std::istream& in);
void write_preferences(std::ostream& out, const std::vector<PreferenceRecord>& records,
                       const std::string& trajectories_path);

struct LoadedDataset {
  PreferenceDataset dataset;
  double gamma_default = 1.0;
};

// Loads a preference file and the trajectory file its header names (or
// `trajectories_override` when given). Errors carry the file and line.
LoadedDataset load_dataset(const std::filesystem::path& preferences,
                           const std::optional<std::filesystem::path>& trajectories_override = {});

// Writes <dir>/<stem>.traj.jsonl and <dir>/<stem>.prefs.jsonl; returns the
// preference file path.
std::filesystem::path save_dataset(const std::filesystem::path& dir, const std::string& stem,
                                   const PreferenceDataset& data, double gamma_default = 1.0);

// Inline JSON form used by the tuning service:
// {"trajectories": [...], "preferences": [...]}.
nlohmann::json dataset_to_json(const PreferenceDataset& data);
PreferenceDataset dataset_from_json(const nlohmann::json& j);
nlohmann::json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const PreferenceRecord& rec);
PreferenceRecord record_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Synthetic data with a known ground-truth reward.
// ---------------------------------------------------------------------------

struct FeatureDistribution {
  enum class Kind { StandardNormal, Uniform } kind = Kind::StandardNormal;
  double lo = -1.0;
  double hi = 1.0;

  static FeatureDistribution standard_normal() { return {}; }
  static FeatureDistribution uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
};

struct SyntheticSpec {
  std::size_t dim = 2;
  std::size_t num_trajectories = 40;
  std::size_t min_steps = 1;
  std::size_t max_steps = 10;
  FeatureDistribution features;
  std::vector<double> true_weights;
  double gamma = 1.0;
  std::size_t num_preferences = 50;
  double tie_epsilon = 0.0;
  // Pairs whose |dG| under the true weights falls in (tie_epsilon, min_margin)
  // are redrawn; 0 disables.
  double min_margin = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

PreferenceDataset generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Label noise: each label is replaced, with probability eta, by one of the
// other two classes chosen uniformly. eta must stay below 2/3.
// ---------------------------------------------------------------------------

inline constexpr double kMaxNoiseRate = 2.0 / 3.0;

struct NoiseSpec {
  using RateFunction = std::function<double(const Trajectory& left, const Trajectory& right)>;

  double rate = 0.0;           // used when rate_function is empty
  RateFunction rate_function;  // input-dependent eta_x
  std::uint64_t seed = 0;

  static NoiseSpec uniform(double rate, std::uint64_t seed) { return {rate, {}, seed}; }
  static NoiseSpec input_dependent(RateFunction fn, std::uint64_t seed) {
    return {0.0, std::move(fn), seed};
  }
};

struct CorruptedDataset {
  PreferenceDataset dataset;
  std::vector<bool> flipped;  // per record
};

CorruptedDataset corrupt_labels(const PreferenceDataset& data, const NoiseSpec& noise);

// Five single-step items with features 0..4. The clean variant has the four
// adjacent pairs, higher feature preferred; the noisy variant adds (2, 4)
// labeled with item 2 preferred.
PreferenceDataset toy_fixture(bool noisy);
inline constexpr std::size_t kToyMislabeledRecord = 4;

// ---------------------------------------------------------------------------
// Robustness ablations.
// ---------------------------------------------------------------------------

struct AblationRow {
  std::size_t model = 0;
  double parameter = 0.0;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

// `count` models whose weights are independent N(0, scale^2) draws plus `center`.
std::vector<LinearRewardModel> sample_models(const std::vector<double>& center, double scale,
                                             std::size_t count, double gamma, std::uint64_t seed);

// For each size, `repeats` random subsets (without replacement); every model
// is scored on the same subsets. Rows are model-major. Subsets whose TAC is
// undefined for a model are skipped and reduce n.
std::vector<AblationRow> ablation_preference_count(const PreferenceDataset& data,
                                                   const std::vector<std::size_t>& sizes,
                                                   std::size_t repeats,
                                                   const std::vector<LinearRewardModel>& models,
                                                   std::uint64_t seed, double tie_epsilon = 0.0);

// TAC after truncating every trajectory to its first L steps; labels kept.
std::vector<AblationRow> ablation_segment_length(const PreferenceDataset& data,
                                                 const std::vector<std::size_t>& lengths,
                                                 const LinearRewardModel& model,
                                                 double tie_epsilon = 0.0);

PreferenceDataset truncate_trajectories(const PreferenceDataset& data, std::size_t length);

// Tab-separated (parameter, mean, stderr, n), 6 significant digits.
void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace prefalign
