#include "prefalign/losses.hpp"

#include <cmath>
#include <numeric>

#include "prefalign/alignment.hpp"
#include "prefalign/errors.hpp"

namespace prefalign {

const char* loss_name(LossKind kind) noexcept {
  return kind == LossKind::SoftTAC ? "soft-tac" : "cross-entropy";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "soft-tac" || name == "SoftTAC" || name == "soft_tac") return LossKind::SoftTAC;
  if (name == "cross-entropy" || name == "CrossEntropy" || name == "cross_entropy" ||
      name == "ce") {
    return LossKind::CrossEntropy;
  }
  throw InvalidArgument("unknown loss '" + name + "' (expected soft-tac or cross-entropy)");
}

double logistic(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

double soft_tac_sample_loss(double scaled_delta, int y) noexcept {
  return 1.0 - y * std::tanh(scaled_delta);
}

double cross_entropy_sample_loss(double scaled_delta, int y) noexcept {
  const double target = 0.5 * (y + 1);
  // -[t log P + (1-t) log(1-P)] with log P = -softplus(-z), log(1-P) = -softplus(z).
  return target * softplus(-scaled_delta) + (1.0 - target) * softplus(scaled_delta);
}

double sample_loss_slope(LossKind kind, double delta_return, int y, double alpha) noexcept {
  const double z = alpha * delta_return;
  if (kind == LossKind::SoftTAC) {
    const double t = std::tanh(z);
    return -y * alpha * (1.0 - t * t);
  }
  return alpha * (logistic(z) - 0.5 * (y + 1));
}

LossBatch evaluate_loss(LossKind kind, const PairTable& pairs, std::span<const double> weights,
                        std::span<const std::size_t> indices, double alpha) {
  require_positive_alpha(alpha);
  require_same_dim(pairs.dim, weights.size(), loss_name(kind));
  const std::size_t n = indices.empty() ? pairs.size() : indices.size();
  if (n == 0) throw InvalidArgument("loss over an empty batch");

  LossBatch out;
  out.count = n;
  out.gradient.assign(pairs.dim, 0.0);
  std::vector<double> diff(pairs.dim);
  // Soft-TAC accumulates sum(y tanh) so the value is exactly 1 - soft_tac.
  double accumulator = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = indices.empty() ? k : indices[k];
    const double delta = pairs.delta_return(i, weights);
    const int y = pairs.label[i];
    if (kind == LossKind::SoftTAC) {
      accumulator += y * std::tanh(alpha * delta);
    } else {
      accumulator += cross_entropy_sample_loss(alpha * delta, y);
    }
    const double slope = sample_loss_slope(kind, delta, y, alpha);
    if (slope != 0.0) {
      pairs.delta_gradient(i, diff);
      for (std::size_t d = 0; d < pairs.dim; ++d) out.gradient[d] += slope * diff[d];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.value = kind == LossKind::SoftTAC ? 1.0 - accumulator / static_cast<double>(n)
                                        : accumulator / static_cast<double>(n);
  for (double& g : out.gradient) g *= inv;
  return out;
}

LossBatch evaluate_loss(LossKind kind, const PairTable& pairs, std::span<const double> weights,
                        double alpha) {
  return evaluate_loss(kind, pairs, weights, std::span<const std::size_t>{}, alpha);
}

std::vector<double> sample_gradient(LossKind kind, const PairTable& pairs,
                                    std::span<const double> weights, std::size_t pair,
                                    double alpha) {
  require_same_dim(pairs.dim, weights.size(), "sample_gradient");
  std::vector<double> grad(pairs.dim);
  pairs.delta_gradient(pair, grad);
  const double slope = sample_loss_slope(kind, pairs.delta_return(pair, weights),
                                         pairs.label[pair], alpha);
  for (double& g : grad) g *= slope;
  return grad;
}

namespace {

LossBatch dataset_loss(LossKind kind, const LinearRewardModel& model,
                       const PreferenceDataset& batch, double alpha) {
  require_same_dim(batch.dim(), model.dim(), loss_name(kind));
  return evaluate_loss(kind, compile_pairs(batch, model.gamma()), model.weights(), alpha);
}

}  // namespace

LossBatch soft_tac_loss(const LinearRewardModel& model, const PreferenceDataset& batch,
                        double alpha) {
  return dataset_loss(LossKind::SoftTAC, model, batch, alpha);
}

LossBatch cross_entropy_loss(const LinearRewardModel& model, const PreferenceDataset& batch,
                             double alpha) {
  return dataset_loss(LossKind::CrossEntropy, model, batch, alpha);
}

}  // namespace prefalign
