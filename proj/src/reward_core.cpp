#include "prefalign/reward_core.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <utility>

#include "prefalign/errors.hpp"

namespace prefalign {

Trajectory::Trajectory(std::string id, std::vector<FeatureVector> steps, Metadata metadata)
    : id_(std::move(id)), steps_(std::move(steps)), metadata_(std::move(metadata)) {
  if (id_.empty()) throw ValidationError("trajectory id must be non-empty");
  if (steps_.empty()) throw ValidationError("trajectory '" + id_ + "' has no steps");
  const std::size_t d = steps_.front().size();
  if (d == 0) throw ValidationError("trajectory '" + id_ + "' has zero-dimensional features");
  for (std::size_t t = 0; t < steps_.size(); ++t) {
    if (steps_[t].size() != d) {
      std::ostringstream msg;
      msg << "trajectory '" << id_ << "' step " << t << " has dimension " << steps_[t].size()
          << ", expected " << d;
      throw ValidationError(msg.str());
    }
    for (double v : steps_[t]) {
      if (!std::isfinite(v)) {
        throw ValidationError("trajectory '" + id_ + "' contains a non-finite feature value");
      }
    }
  }
}

Trajectory Trajectory::truncated(std::size_t length) const {
  if (length == 0) throw InvalidArgument("segment length must be positive");
  if (length >= steps_.size()) return *this;
  return Trajectory(id_, std::vector<FeatureVector>(steps_.begin(), steps_.begin() + length),
                    metadata_);
}

Label label_from_int(int value) {
  switch (value) {
    case 1:
      return Label::LeftPreferred;
    case -1:
      return Label::RightPreferred;
    case 0:
      return Label::Tie;
    default:
      throw ValidationError("preference label must be -1, 0 or 1, got " + std::to_string(value));
  }
}

const char* label_name(Label label) noexcept {
  switch (label) {
    case Label::LeftPreferred:
      return "left";
    case Label::RightPreferred:
      return "right";
    case Label::Tie:
      return "tie";
  }
  return "?";
}

PreferenceDataset::PreferenceDataset(std::vector<Trajectory> trajectories,
                                     std::vector<PreferenceRecord> records)
    : trajectories_(std::move(trajectories)), records_(std::move(records)) {
  if (trajectories_.empty()) throw ValidationError("dataset has no trajectories");
  dim_ = trajectories_.front().dim();
  for (std::size_t i = 0; i < trajectories_.size(); ++i) {
    const auto& traj = trajectories_[i];
    if (traj.dim() != dim_) {
      throw ValidationError("trajectory '" + traj.id() + "' has dimension " +
                            std::to_string(traj.dim()) + ", dataset dimension is " +
                            std::to_string(dim_));
    }
    if (!index_.emplace(traj.id(), i).second) {
      throw ValidationError("duplicate trajectory id '" + traj.id() + "'");
    }
  }

  // Unordered pair -> label expressed in (min id, max id) orientation.
  std::map<std::pair<std::string, std::string>, std::pair<int, std::size_t>> seen;
  for (std::size_t r = 0; r < records_.size(); ++r) {
    const auto& rec = records_[r];
    for (const auto* id : {&rec.left, &rec.right}) {
      if (!contains(*id)) {
        throw ValidationError("record " + std::to_string(r) + " references unknown trajectory '" +
                              *id + "'");
      }
    }
    if (rec.left == rec.right) {
      throw ValidationError("record " + std::to_string(r) + " compares trajectory '" + rec.left +
                            "' with itself");
    }
    const bool ordered = rec.left < rec.right;
    auto key = ordered ? std::make_pair(rec.left, rec.right) : std::make_pair(rec.right, rec.left);
    const int canonical = ordered ? to_int(rec.label) : -to_int(rec.label);
    auto [it, inserted] = seen.emplace(std::move(key), std::make_pair(canonical, r));
    if (!inserted && it->second.first != canonical) {
      throw ValidationError("records " + std::to_string(it->second.second) + " and " +
                            std::to_string(r) + " give contradictory labels for pair ('" +
                            rec.left + "', '" + rec.right + "')");
    }
  }
}

const Trajectory& PreferenceDataset::trajectory(const std::string& id) const {
  return trajectories_[trajectory_index(id)];
}

std::size_t PreferenceDataset::trajectory_index(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ValidationError("unknown trajectory id '" + id + "'");
  return it->second;
}

PreferenceDataset PreferenceDataset::with_records(std::vector<PreferenceRecord> records) const {
  return PreferenceDataset(trajectories_, std::move(records));
}

PreferenceDataset PreferenceDataset::subset(std::span<const std::size_t> record_indices) const {
  std::vector<PreferenceRecord> picked;
  picked.reserve(record_indices.size());
  for (std::size_t i : record_indices) {
    if (i >= records_.size()) throw InvalidArgument("record index out of range");
    picked.push_back(records_[i]);
  }
  return with_records(std::move(picked));
}

std::vector<std::string> PreferenceDataset::transitivity_violations(std::size_t limit) const {
  // Directed "better than" graph over strict preferences; report 3-cycles.
  std::map<std::string, std::set<std::string>> better;
  for (const auto& rec : records_) {
    if (rec.label == Label::LeftPreferred) better[rec.left].insert(rec.right);
    if (rec.label == Label::RightPreferred) better[rec.right].insert(rec.left);
  }
  std::vector<std::string> out;
  for (const auto& [a, worse_than_a] : better) {
    for (const auto& b : worse_than_a) {
      auto bit = better.find(b);
      if (bit == better.end()) continue;
      for (const auto& c : bit->second) {
        auto cit = better.find(c);
        if (cit == better.end() || !cit->second.count(a)) continue;
        // Report each cycle once, rooted at its smallest id.
        if (!(a < b && a < c)) continue;
        out.push_back("intransitive preferences: " + a + " > " + b + " > " + c + " > " + a);
        if (out.size() >= limit) return out;
      }
    }
  }
  return out;
}

LinearRewardModel::LinearRewardModel(std::vector<double> weights, double gamma)
    : weights_(std::move(weights)), gamma_(gamma) {
  if (!(gamma_ >= 0.0 && gamma_ <= 1.0)) {
    throw InvalidArgument("gamma must lie in [0, 1]");
  }
  for (double w : weights_) {
    if (!std::isfinite(w)) throw InvalidArgument("reward weights must be finite");
  }
}

void require_same_dim(std::size_t expected, std::size_t actual, const char* what) {
  if (expected != actual) {
    std::ostringstream msg;
    msg << what << ": expected dimension " << expected << ", got " << actual;
    throw DimensionMismatch(msg.str());
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

double step_reward(const LinearRewardModel& model, std::span<const double> features) {
  require_same_dim(model.dim(), features.size(), "step_reward");
  return dot(model.weights(), features);
}

double discounted_return(const LinearRewardModel& model, const Trajectory& traj) {
  require_same_dim(model.dim(), traj.dim(), "discounted_return");
  double total = 0.0;
  double discount = 1.0;
  for (const auto& step : traj.steps()) {
    total += discount * dot(model.weights(), step);
    discount *= model.gamma();
  }
  return total;
}

std::vector<double> discounted_feature_sum(const Trajectory& traj, double gamma) {
  std::vector<double> sum(traj.dim(), 0.0);
  double discount = 1.0;
  for (const auto& step : traj.steps()) {
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += discount * step[k];
    discount *= gamma;
  }
  return sum;
}

std::vector<double> return_gradient(const LinearRewardModel& model, const Trajectory& traj) {
  require_same_dim(model.dim(), traj.dim(), "return_gradient");
  return discounted_feature_sum(traj, model.gamma());
}

void PairTable::delta_gradient(std::size_t pair, std::span<double> out) const {
  const auto& a = feature_sums[left[pair]];
  const auto& b = feature_sums[right[pair]];
  for (std::size_t k = 0; k < dim; ++k) out[k] = a[k] - b[k];
}

PairTable compile_pairs(const PreferenceDataset& data, double gamma) {
  PairTable table;
  table.dim = data.dim();
  table.feature_sums.reserve(data.trajectories().size());
  for (const auto& traj : data.trajectories()) {
    table.feature_sums.push_back(discounted_feature_sum(traj, gamma));
  }
  table.left.reserve(data.size());
  table.right.reserve(data.size());
  table.label.reserve(data.size());
  for (const auto& rec : data.records()) {
    table.left.push_back(data.trajectory_index(rec.left));
    table.right.push_back(data.trajectory_index(rec.right));
    table.label.push_back(to_int(rec.label));
  }
  return table;
}

}  // namespace prefalign
