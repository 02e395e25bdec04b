#include "prefalign/alignment.hpp"

#include <cmath>

#include "prefalign/errors.hpp"

namespace prefalign {

const char* pair_class_name(PairClass c) noexcept {
  switch (c) {
    case PairClass::Concordant:
      return "concordant";
    case PairClass::Discordant:
      return "discordant";
    case PairClass::TiedInducedOnly:
      return "tied_induced";
    case PairClass::TiedHumanOnly:
      return "tied_human";
    case PairClass::TiedBoth:
      return "tied_both";
  }
  return "?";
}

PairClass classify(Label human, Label induced) noexcept {
  const bool human_tie = human == Label::Tie;
  const bool induced_tie = induced == Label::Tie;
  if (human_tie && induced_tie) return PairClass::TiedBoth;
  if (induced_tie) return PairClass::TiedInducedOnly;
  if (human_tie) return PairClass::TiedHumanOnly;
  return human == induced ? PairClass::Concordant : PairClass::Discordant;
}

void AlignmentCounts::add(PairClass c) noexcept {
  switch (c) {
    case PairClass::Concordant:
      ++concordant;
      break;
    case PairClass::Discordant:
      ++discordant;
      break;
    case PairClass::TiedInducedOnly:
      ++tied_only_induced;
      break;
    case PairClass::TiedHumanOnly:
      ++tied_only_human;
      break;
    case PairClass::TiedBoth:
      ++tied_both;
      break;
  }
}

bool AlignmentCounts::defined() const noexcept {
  const std::size_t strict = concordant + discordant;
  return strict + tied_only_induced > 0 && strict + tied_only_human > 0;
}

double AlignmentCounts::tau_b() const {
  const std::size_t strict = concordant + discordant;
  // X0 pairs are human-strict, Y0 pairs are induced-strict.
  const std::size_t human_strict = strict + tied_only_induced;
  const std::size_t induced_strict = strict + tied_only_human;
  if (human_strict == 0) {
    throw DegenerateDataset("TAC undefined: every human label is a tie");
  }
  if (induced_strict == 0) {
    throw DegenerateDataset("TAC undefined: the reward ties every pair");
  }
  const double numerator = static_cast<double>(concordant) - static_cast<double>(discordant);
  return numerator /
         std::sqrt(static_cast<double>(human_strict) * static_cast<double>(induced_strict));
}

Label verdict_for(double delta_return, double tie_epsilon) noexcept {
  if (delta_return > tie_epsilon) return Label::LeftPreferred;
  if (delta_return < -tie_epsilon) return Label::RightPreferred;
  return Label::Tie;
}

void require_positive_alpha(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw InvalidArgument("alpha must be a positive finite number");
  }
}

namespace {

void require_tie_epsilon(double tie_epsilon) {
  if (!(tie_epsilon >= 0.0)) throw InvalidArgument("tie_epsilon must be non-negative");
}

PairTable compile_checked(const PreferenceDataset& data, const LinearRewardModel& model,
                          const char* what) {
  require_same_dim(data.dim(), model.dim(), what);
  return compile_pairs(data, model.gamma());
}

}  // namespace

std::vector<InducedPreference> induce_preferences(const LinearRewardModel& model,
                                                  const PreferenceDataset& data,
                                                  double tie_epsilon) {
  require_tie_epsilon(tie_epsilon);
  const PairTable pairs = compile_checked(data, model, "induce_preferences");
  std::vector<InducedPreference> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double delta = pairs.delta_return(i, model.weights());
    const auto& rec = data.records()[i];
    out.push_back({rec.left, rec.right, delta, verdict_for(delta, tie_epsilon)});
  }
  return out;
}

AlignmentReport tac(const PreferenceDataset& human, const LinearRewardModel& model,
                    double tie_epsilon) {
  AlignmentReport report;
  auto induced = induce_preferences(model, human, tie_epsilon);
  report.per_pair.reserve(induced.size());
  for (std::size_t i = 0; i < induced.size(); ++i) {
    const auto& rec = human.records()[i];
    const PairClass c = classify(rec.label, induced[i].verdict);
    report.counts.add(c);
    report.per_pair.push_back({rec, std::move(induced[i]), c});
  }
  report.tac = report.counts.tau_b();
  return report;
}

AlignmentCounts alignment_counts(const PairTable& pairs, std::span<const double> weights,
                                 double tie_epsilon) {
  require_same_dim(pairs.dim, weights.size(), "alignment_counts");
  AlignmentCounts counts;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Label induced = verdict_for(pairs.delta_return(i, weights), tie_epsilon);
    counts.add(classify(static_cast<Label>(pairs.label[i]), induced));
  }
  return counts;
}

double soft_tac(const PairTable& pairs, std::span<const double> weights, double alpha) {
  require_positive_alpha(alpha);
  require_same_dim(pairs.dim, weights.size(), "soft_tac");
  if (pairs.size() == 0) throw InvalidArgument("soft_tac of an empty dataset");
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    sum += pairs.label[i] * std::tanh(alpha * pairs.delta_return(i, weights));
  }
  return sum / static_cast<double>(pairs.size());
}

double soft_tac(const PreferenceDataset& human, const LinearRewardModel& model, double alpha) {
  require_positive_alpha(alpha);
  return soft_tac(compile_checked(human, model, "soft_tac"), model.weights(), alpha);
}

double accuracy(const PairTable& pairs, std::span<const double> weights, double tie_epsilon) {
  require_same_dim(pairs.dim, weights.size(), "accuracy");
  if (pairs.size() == 0) throw InvalidArgument("accuracy of an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (to_int(verdict_for(pairs.delta_return(i, weights), tie_epsilon)) == pairs.label[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double accuracy(const PreferenceDataset& human, const LinearRewardModel& model,
                double tie_epsilon) {
  require_tie_epsilon(tie_epsilon);
  if (human.empty()) throw InvalidArgument("accuracy of an empty dataset");
  return accuracy(compile_checked(human, model, "accuracy"), model.weights(), tie_epsilon);
}

}  // namespace prefalign
