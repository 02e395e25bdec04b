#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefalign/reward_core.hpp"

namespace prefalign {

struct InducedPreference {
  std::string left;
  std::string right;
  double delta_return = 0.0;  // G(left) - G(right)
  Label verdict = Label::Tie;
};

// How one record contributes to Kendall's Tau-b.
enum class PairClass { Concordant, Discordant, TiedInducedOnly, TiedHumanOnly, TiedBoth };

const char* pair_class_name(PairClass c) noexcept;
PairClass classify(Label human, Label induced) noexcept;

struct PairDiagnostic {
  PreferenceRecord record;
  InducedPreference induced;
  PairClass classification = PairClass::TiedBoth;
};

// Tau-b agreement between human and induced preferences.
struct AlignmentCounts {
  std::size_t concordant = 0;        // P
  std::size_t discordant = 0;        // Q
  std::size_t tied_only_induced = 0; // X0
  std::size_t tied_only_human = 0;   // Y0
  std::size_t tied_both = 0;

  std::size_t total() const noexcept {
    return concordant + discordant + tied_only_induced + tied_only_human + tied_both;
  }
  void add(PairClass c) noexcept;
  // Both denominator factors are positive.
  bool defined() const noexcept;
  // (P - Q) / sqrt((P + Q + X0)(P + Q + Y0)); throws DegenerateDataset.
  double tau_b() const;
};

struct AlignmentReport {
  double tac = 0.0;
  AlignmentCounts counts;
  std::vector<PairDiagnostic> per_pair;
};

Label verdict_for(double delta_return, double tie_epsilon) noexcept;

std::vector<InducedPreference> induce_preferences(const LinearRewardModel& model,
                                                  const PreferenceDataset& data,
                                                  double tie_epsilon = 0.0);

// Trajectory Alignment Coefficient. Throws DegenerateDataset when either
// denominator factor is zero.
AlignmentReport tac(const PreferenceDataset& human, const LinearRewardModel& model,
                    double tie_epsilon = 0.0);

// Mean of y * tanh(alpha * dG) over all records (ties contribute 0).
double soft_tac(const PreferenceDataset& human, const LinearRewardModel& model, double alpha);

// Fraction of records whose induced verdict equals the human label exactly.
double accuracy(const PreferenceDataset& human, const LinearRewardModel& model,
                double tie_epsilon = 0.0);

// Same quantities over a precompiled pair table; used by the trainer.
AlignmentCounts alignment_counts(const PairTable& pairs, std::span<const double> weights,
                                 double tie_epsilon = 0.0);
double soft_tac(const PairTable& pairs, std::span<const double> weights, double alpha);
double accuracy(const PairTable& pairs, std::span<const double> weights, double tie_epsilon = 0.0);

void require_positive_alpha(double alpha);

}  // namespace prefalign
