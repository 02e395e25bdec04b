#pragma once

#include <span>
#include <string>
#include <vector>

#include "prefalign/reward_core.hpp"

namespace prefalign {

enum class LossKind { SoftTAC, CrossEntropy };

const char* loss_name(LossKind kind) noexcept;
LossKind parse_loss_kind(const std::string& name);

struct LossBatch {
  std::size_t count = 0;  // records in the batch
  double value = 0.0;
  std::vector<double> gradient;
};

// Per-sample Soft-TAC loss 1 - y tanh(z) where z = alpha * dG. Lies in [0, 2].
double soft_tac_sample_loss(double scaled_delta, int y) noexcept;
// Per-sample cross-entropy with y_ce = (y + 1) / 2 and P = logistic(z),
// written with softplus so |z| up to ~1e300 does not overflow.
double cross_entropy_sample_loss(double scaled_delta, int y) noexcept;

// d loss / d dG for one sample (multiply by the feature-sum difference to
// get the weight gradient).
double sample_loss_slope(LossKind kind, double delta_return, int y, double alpha) noexcept;

double logistic(double z) noexcept;

// Batch losses over the records of `batch`. Value is the mean per-sample
// loss, gradient the mean per-sample gradient.
LossBatch soft_tac_loss(const LinearRewardModel& model, const PreferenceDataset& batch,
                        double alpha = 1.0);
LossBatch cross_entropy_loss(const LinearRewardModel& model, const PreferenceDataset& batch,
                             double alpha = 1.0);

// Pair-table forms. `indices` selects the batch; empty span means all pairs.
LossBatch evaluate_loss(LossKind kind, const PairTable& pairs, std::span<const double> weights,
                        std::span<const std::size_t> indices, double alpha);
LossBatch evaluate_loss(LossKind kind, const PairTable& pairs, std::span<const double> weights,
                        double alpha);

// Gradient of a single record's loss with respect to the weights.
std::vector<double> sample_gradient(LossKind kind, const PairTable& pairs,
                                    std::span<const double> weights, std::size_t pair,
                                    double alpha);

}  // namespace prefalign
