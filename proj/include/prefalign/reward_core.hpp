#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prefalign {

using FeatureVector = std::vector<double>;
using Metadata = std::map<std::string, std::string>;

// A finite sequence of per-step feature vectors phi(s_t, a_t, s_{t+1}).
// Immutable once constructed; the constructor enforces non-empty steps,
// constant dimensionality and finite values.
class Trajectory {
 public:
  Trajectory(std::string id, std::vector<FeatureVector> steps, Metadata metadata = {});

  const std::string& id() const noexcept { return id_; }
  const std::vector<FeatureVector>& steps() const noexcept { return steps_; }
  const Metadata& metadata() const noexcept { return metadata_; }
  std::size_t dim() const noexcept { return steps_.front().size(); }
  std::size_t length() const noexcept { return steps_.size(); }

  // First `length` steps (or the whole trajectory when it is shorter).
  Trajectory truncated(std::size_t length) const;

 private:
  std::string id_;
  std::vector<FeatureVector> steps_;
  Metadata metadata_;
};

// Canonical encoding: +1 left preferred, -1 right preferred, 0 tie.
enum class Label : std::int8_t { RightPreferred = -1, Tie = 0, LeftPreferred = 1 };

inline int to_int(Label label) noexcept { return static_cast<int>(label); }
Label label_from_int(int value);
const char* label_name(Label label) noexcept;
inline Label flipped(Label label) noexcept { return static_cast<Label>(-to_int(label)); }

struct PreferenceRecord {
  std::string left;
  std::string right;
  Label label = Label::Tie;

  bool operator==(const PreferenceRecord&) const = default;
};

// Labeled trajectory pairs over an id-indexed trajectory collection.
//
// Validation at construction: every record references known trajectories,
// left != right, one shared dimensionality, and no unordered pair carries
// two contradictory labels. Intransitive cycles are permitted and can be
// inspected with transitivity_violations().
class PreferenceDataset {
 public:
  PreferenceDataset(std::vector<Trajectory> trajectories, std::vector<PreferenceRecord> records);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const std::vector<PreferenceRecord>& records() const noexcept { return records_; }
  // Trajectories in insertion order.
  const std::vector<Trajectory>& trajectories() const noexcept { return trajectories_; }
  const Trajectory& trajectory(const std::string& id) const;
  std::size_t trajectory_index(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  // Same trajectories, different records (validated again).
  PreferenceDataset with_records(std::vector<PreferenceRecord> records) const;
  PreferenceDataset subset(std::span<const std::size_t> record_indices) const;

  // Strict-preference triples a > b > c with c > a (or equivalent through ties
  // is not considered). One human-readable line per detected cycle.
  std::vector<std::string> transitivity_violations(std::size_t limit = 16) const;

 private:
  std::vector<Trajectory> trajectories_;
  std::map<std::string, std::size_t> index_;
  std::vector<PreferenceRecord> records_;
  std::size_t dim_ = 0;
};

// Weight vector theta plus discount gamma.
class LinearRewardModel {
 public:
  explicit LinearRewardModel(std::vector<double> weights, double gamma = 1.0);

  const std::vector<double>& weights() const noexcept { return weights_; }
  double gamma() const noexcept { return gamma_; }
  std::size_t dim() const noexcept { return weights_.size(); }

  LinearRewardModel with_weights(std::vector<double> weights) const {
    return LinearRewardModel(std::move(weights), gamma_);
  }

 private:
  std::vector<double> weights_;
  double gamma_;
};

double step_reward(const LinearRewardModel& model, std::span<const double> features);
double discounted_return(const LinearRewardModel& model, const Trajectory& traj);
// d G / d theta = sum_t gamma^t phi_t.
std::vector<double> return_gradient(const LinearRewardModel& model, const Trajectory& traj);

// Convenience overloads for the discounted feature sum without a model.
std::vector<double> discounted_feature_sum(const Trajectory& traj, double gamma);

double dot(std::span<const double> a, std::span<const double> b);
void require_same_dim(std::size_t expected, std::size_t actual, const char* what);

// Dense pair view of a dataset for a fixed gamma: one discounted feature sum
// per trajectory and (left, right, y) triples indexing into it. Every loss and
// alignment score is computed through this table so they agree exactly.
struct PairTable {
  std::size_t dim = 0;
  std::vector<std::vector<double>> feature_sums;  // per trajectory
  std::vector<std::size_t> left;
  std::vector<std::size_t> right;
  std::vector<int> label;  // y in {-1, 0, +1}

  std::size_t size() const noexcept { return label.size(); }
  double return_of(std::size_t traj, std::span<const double> weights) const {
    return dot(weights, feature_sums[traj]);
  }
  double delta_return(std::size_t pair, std::span<const double> weights) const {
    return return_of(left[pair], weights) - return_of(right[pair], weights);
  }
  // grad G(left) - grad G(right), written into `out`.
  void delta_gradient(std::size_t pair, std::span<double> out) const;
};

PairTable compile_pairs(const PreferenceDataset& data, double gamma);

}  // namespace prefalign
