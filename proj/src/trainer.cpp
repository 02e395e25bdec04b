#include "prefalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <random>
#include <sstream>

#include "prefalign/alignment.hpp"
#include "prefalign/errors.hpp"

namespace prefalign {

const char* optimizer_name(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam" || name == "Adam") return OptimizerKind::Adam;
  if (name == "sgd" || name == "SGD" || name == "Sgd") return OptimizerKind::Sgd;
  throw InvalidArgument("unknown optimizer '" + name + "' (expected adam or sgd)");
}

const char* stop_reason_name(StopReason reason) noexcept {
  return reason == StopReason::EarlyStop ? "early_stop" : "max_epochs";
}

void TrainConfig::validate() const {
  require_positive_alpha(alpha);
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning_rate must be positive");
  }
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (patience < 1) throw InvalidArgument("patience must be at least 1");
  if (!(loss_delta >= 0.0)) throw InvalidArgument("loss_delta must be non-negative");
  if (clip_low && clip_high && *clip_low > *clip_high) {
    throw InvalidArgument("clip_low must not exceed clip_high");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
  if (!(tie_epsilon >= 0.0)) throw InvalidArgument("tie_epsilon must be non-negative");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw InvalidArgument("validation_fraction must lie in [0, 1)");
  }
}

void AdamState::apply(std::span<double> weights, std::span<const double> gradient,
                      double learning_rate) {
  ++step_count;
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    first_moment[i] = beta1 * first_moment[i] + (1.0 - beta1) * gradient[i];
    second_moment[i] = beta2 * second_moment[i] + (1.0 - beta2) * gradient[i] * gradient[i];
    const double m_hat = first_moment[i] / correction1;
    const double v_hat = second_moment[i] / correction2;
    weights[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + epsilon);
  }
}

namespace {

void clamp_weights(std::span<double> weights, std::optional<double> lo, std::optional<double> hi) {
  for (double& w : weights) {
    if (lo) w = std::max(w, *lo);
    if (hi) w = std::min(w, *hi);
  }
}

// Separate streams for initialization, shuffling and the validation split so
// changing one consumer never perturbs another.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kSplitStream = 3;

EpochMetrics measure(std::size_t epoch, const PairTable& pairs, std::span<const double> weights,
                     const TrainConfig& config) {
  EpochMetrics m;
  m.epoch = epoch;
  const AlignmentCounts counts = alignment_counts(pairs, weights, config.tie_epsilon);
  if (counts.defined()) m.tac = counts.tau_b();
  m.accuracy = accuracy(pairs, weights, config.tie_epsilon);
  m.loss = evaluate_loss(config.loss, pairs, weights, config.alpha).value;
  m.weights.assign(weights.begin(), weights.end());
  if (!std::isfinite(m.loss)) {
    std::ostringstream msg;
    msg << "non-finite " << loss_name(config.loss) << " loss at epoch " << epoch
        << " (learning rate " << config.learning_rate << ")";
    throw TrainingError(msg.str());
  }
  return m;
}

PairTable select_pairs(const PairTable& all, std::span<const std::size_t> indices) {
  PairTable out;
  out.dim = all.dim;
  out.feature_sums = all.feature_sums;
  for (std::size_t i : indices) {
    out.left.push_back(all.left[i]);
    out.right.push_back(all.right[i]);
    out.label.push_back(all.label[i]);
  }
  return out;
}

}  // namespace

std::vector<double> init_weights(std::size_t dim, std::uint64_t seed, std::optional<double> clip_low,
                                 std::optional<double> clip_high) {
  if (dim < 1) throw InvalidArgument("init_weights: dim must be at least 1");
  auto rng = stream(seed, kInitStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(dim);
  for (double& x : w) x = normal(rng);
  clamp_weights(w, clip_low, clip_high);
  return w;
}

bool improves_on(const EpochMetrics& candidate, const EpochMetrics& best, double loss_delta) {
  // An undefined TAC ranks below every defined one.
  bool tac_holds;
  if (!candidate.tac) {
    tac_holds = !best.tac;
  } else {
    tac_holds = !best.tac || *candidate.tac >= *best.tac;
  }
  if (!tac_holds) return false;
  return candidate.accuracy > best.accuracy || candidate.loss < best.loss - loss_delta;
}

TrainRun train(const PreferenceDataset& data, const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw InvalidArgument("train: dataset has no preference records");
  const bool any_strict = std::any_of(data.records().begin(), data.records().end(),
                                      [](const auto& r) { return r.label != Label::Tie; });
  if (!any_strict) {
    throw DegenerateDataset("train: every human label is a tie, TAC is undefined for any reward");
  }

  const PairTable all_pairs = compile_pairs(data, config.gamma);
  const std::size_t dim = data.dim();

  std::vector<std::size_t> train_idx(all_pairs.size());
  std::iota(train_idx.begin(), train_idx.end(), 0);
  PairTable eval_pairs = all_pairs;
  if (config.validation_fraction > 0.0) {
    auto rng = stream(config.seed, kSplitStream);
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    const auto held = static_cast<std::size_t>(
        std::ceil(config.validation_fraction * static_cast<double>(train_idx.size())));
    if (held == 0 || held >= train_idx.size()) {
      throw InvalidArgument("validation split leaves an empty training or validation set");
    }
    std::vector<std::size_t> val_idx(train_idx.begin(), train_idx.begin() + held);
    train_idx.erase(train_idx.begin(), train_idx.begin() + held);
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    eval_pairs = select_pairs(all_pairs, val_idx);
  }

  std::vector<double> weights;
  if (config.initial_weights) {
    require_same_dim(dim, config.initial_weights->size(), "train: initial_weights");
    weights = *config.initial_weights;
    clamp_weights(weights, config.clip_low, config.clip_high);
  } else {
    weights = init_weights(dim, config.seed, config.clip_low, config.clip_high);
  }

  TrainRun run;
  run.config = config;
  run.initial = measure(0, eval_pairs, weights, config);
  run.best = run.initial;

  AdamState adam(dim);
  auto shuffle_rng = stream(config.seed, kShuffleStream);
  std::vector<std::size_t> order = train_idx;
  std::size_t since_improvement = 0;
  run.stop_reason = StopReason::MaxEpochs;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const LossBatch loss = evaluate_loss(config.loss, all_pairs, weights, batch, config.alpha);
      if (config.optimizer == OptimizerKind::Adam) {
        adam.apply(weights, loss.gradient, config.learning_rate);
      } else {
        for (std::size_t i = 0; i < dim; ++i) weights[i] -= config.learning_rate * loss.gradient[i];
      }
      clamp_weights(weights, config.clip_low, config.clip_high);
    }
    for (double w : weights) {
      if (!std::isfinite(w)) {
        throw TrainingError("non-finite weights after epoch " + std::to_string(epoch));
      }
    }

    EpochMetrics metrics = measure(epoch, eval_pairs, weights, config);
    const bool improved = improves_on(metrics, run.best, config.loss_delta);
    run.epoch_trace.push_back(metrics);
    run.stopped_at_epoch = epoch;
    if (improved) {
      run.best = std::move(metrics);
      since_improvement = 0;
    } else if (++since_improvement >= config.patience) {
      run.stop_reason = StopReason::EarlyStop;
      break;
    }
  }

  run.final_weights = run.best.weights;
  return run;
}

namespace {

// -inf for an undefined TAC so it sorts last.
double tac_key(const EpochMetrics& m) { return m.tac ? *m.tac : -2.0; }

}  // namespace

bool cell_ranks_before(const GridCell& a, const GridCell& b) {
  if (a.run.has_value() != b.run.has_value()) return a.run.has_value();
  if (a.run && b.run) {
    const auto& x = a.run->best;
    const auto& y = b.run->best;
    if (tac_key(x) != tac_key(y)) return tac_key(x) > tac_key(y);
    if (x.accuracy != y.accuracy) return x.accuracy > y.accuracy;
    if (x.loss != y.loss) return x.loss < y.loss;
  }
  if (a.learning_rate != b.learning_rate) return a.learning_rate < b.learning_rate;
  return a.batch_size < b.batch_size;
}

GridResult grid_search(const PreferenceDataset& data, std::span<const double> learning_rates,
                       std::span<const std::size_t> batch_sizes, const TrainConfig& base) {
  if (learning_rates.empty() || batch_sizes.empty()) {
    throw InvalidArgument("grid_search: grid must contain at least one learning rate and batch size");
  }
  GridResult result;
  for (double lr : learning_rates) {
    for (std::size_t batch : batch_sizes) result.cells.push_back({lr, batch, std::nullopt, {}});
  }

  // Cells only read `data`; each writes its own slot.
  std::vector<std::future<void>> pending;
  pending.reserve(result.cells.size());
  for (auto& cell : result.cells) {
    pending.push_back(std::async(std::launch::async, [&data, &base, &cell] {
      TrainConfig config = base;
      config.learning_rate = cell.learning_rate;
      config.batch_size = cell.batch_size;
      try {
        cell.run = train(data, config);
      } catch (const Error& e) {
        cell.error = e.code() + ": " + e.what();
      }
    }));
  }
  for (auto& f : pending) f.get();

  std::size_t best = 0;
  for (std::size_t i = 1; i < result.cells.size(); ++i) {
    if (cell_ranks_before(result.cells[i], result.cells[best])) best = i;
  }
  if (!result.cells[best].run) {
    throw TrainingError("grid_search: every cell failed; first error: " + result.cells[0].error);
  }
  result.best_index = best;
  return result;
}

}  // namespace prefalign
