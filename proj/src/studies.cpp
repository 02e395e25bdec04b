#include "prefalign/studies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <sstream>

#include "prefalign/alignment.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/losses.hpp"

namespace prefalign::studies {

namespace {

std::string num(double x) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

Check check(std::string name, std::string expected, std::string observed, bool pass) {
  return {std::move(name), std::move(expected), std::move(observed), pass};
}

template <typename Fn>
StudyReport timed(const char* name, Fn body) {
  auto t0 = std::chrono::steady_clock::now();
  StudyReport r;
  r.name = name;
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Runs fn(i) for i in [0, n) concurrently; results come back in index order.
template <typename Fn>
auto parallel_map(std::size_t n, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<std::future<R>> futures;
  futures.reserve(n);
  for (std::size_t i = 0; i < n; ++i) futures.push_back(std::async(std::launch::async, fn, i));
  std::vector<R> out;
  out.reserve(n);
  for (auto& f : futures) out.push_back(f.get());
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double grad_magnitude(LossKind kind, const PairTable& pairs, const std::vector<double>& w,
                      std::size_t record) {
  auto g = sample_gradient(kind, pairs, w, record, 1.0);
  double n = 0.0;
  for (double x : g) n += x * x;
  return std::sqrt(n);
}

// Weight and per-record gradient magnitude at epoch 0..N.
Table toy_trace(const char* name, LossKind kind, const TrainRun& run, const PairTable& pairs) {
  std::ostringstream out;
  out << "epoch\tweight";
  for (std::size_t i = 0; i < pairs.size(); ++i) out << "\tgrad_r" << i;
  out << '\n';
  auto row = [&](const EpochMetrics& m) {
    out << m.epoch << '\t' << num(m.weights[0]);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      out << '\t' << num(grad_magnitude(kind, pairs, m.weights, i));
    }
    out << '\n';
  };
  row(run.initial);
  for (const auto& m : run.epoch_trace) row(m);
  return {name, out.str()};
}

}  // namespace

bool StudyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

TrainConfig toy_config(LossKind loss) {
  TrainConfig c;
  c.loss = loss;
  c.optimizer = OptimizerKind::Sgd;
  c.alpha = 1.0;
  c.learning_rate = 0.1;
  c.batch_size = 1;
  c.max_epochs = 40;
  c.patience = 40;
  c.initial_weights = std::vector<double>{0.0};
  c.seed = 0;
  return c;
}

SyntheticSpec property_data_spec(std::size_t dim, std::size_t num_preferences,
                                std::size_t num_trajectories, std::uint64_t seed) {
  SyntheticSpec s;
  s.dim = dim;
  s.num_trajectories = num_trajectories;
  s.min_steps = 5;
  s.max_steps = 20;
  s.features = FeatureDistribution::uniform(-0.1, 0.1);
  s.true_weights = init_weights(dim, 1000 + seed);
  s.num_preferences = num_preferences;
  s.min_margin = 0.05;
  s.seed = seed;
  return s;
}

TrainConfig property_train_config(LossKind loss, std::uint64_t seed, std::size_t max_epochs) {
  TrainConfig c;
  c.loss = loss;
  c.optimizer = OptimizerKind::Adam;
  c.learning_rate = 0.05;
  c.batch_size = 8;
  c.max_epochs = max_epochs;
  c.patience = 50;
  c.seed = seed;
  return c;
}

std::vector<double> gridworld_expert_weights() { return {10.0, -10.0, -0.1, 0.5, -0.6, -0.5}; }

StudyReport toy_noisy() {
  return timed("toy-noisy", [](StudyReport& r) {
    const auto data = toy_fixture(true);
    const auto pairs = compile_pairs(data, 1.0);
    const auto st = train(data, toy_config(LossKind::SoftTAC));
    const auto ce = train(data, toy_config(LossKind::CrossEntropy));

    const double w = st.final_weights[0];
    r.checks.push_back(check("soft-tac final weight", "in [2.0, 2.6]", num(w), w >= 2.0 && w <= 2.6));

    bool monotone = true;
    double prev = st.initial.weights[0];
    for (const auto& m : st.epoch_trace) {
      monotone = monotone && m.weights[0] > prev;
      prev = m.weights[0];
    }
    r.checks.push_back(check("soft-tac weight trace", "strictly increasing",
                             monotone ? "strictly increasing" : "not monotone", monotone));

    const double bad = grad_magnitude(LossKind::SoftTAC, pairs, st.final_weights, kToyMislabeledRecord);
    r.checks.push_back(check("soft-tac mislabeled gradient at end", "<= 1e-3", num(bad), bad <= 1e-3));
    double good_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (i == kToyMislabeledRecord) continue;
      good_min = std::min(good_min, grad_magnitude(LossKind::SoftTAC, pairs, st.final_weights, i));
    }
    r.checks.push_back(check("soft-tac correct-pair gradients at end", ">= 0.01 (min)", num(good_min),
                             good_min >= 0.01));

    double ce_bad_min = grad_magnitude(LossKind::CrossEntropy, pairs, ce.initial.weights, kToyMislabeledRecord);
    for (const auto& m : ce.epoch_trace) {
      ce_bad_min = std::min(ce_bad_min, grad_magnitude(LossKind::CrossEntropy, pairs, m.weights,
                                                       kToyMislabeledRecord));
    }
    r.checks.push_back(check("cross-entropy mislabeled gradient, every epoch", ">= 1.0 (min)",
                             num(ce_bad_min), ce_bad_min >= 1.0));
    const double wc = ce.final_weights[0];
    r.checks.push_back(check("cross-entropy final weight", "< 1.0", num(wc), wc < 1.0));
    r.checks.push_back(check("soft-tac weight above cross-entropy weight", "true",
                             w > wc ? "true" : "false", w > wc));

    r.tables.push_back(toy_trace("soft_tac_trace", LossKind::SoftTAC, st, pairs));
    r.tables.push_back(toy_trace("cross_entropy_trace", LossKind::CrossEntropy, ce, pairs));
  });
}

StudyReport toy_clean() {
  return timed("toy-clean", [](StudyReport& r) {
    const auto data = toy_fixture(false);
    std::ostringstream t;
    t << "loss\tfinal_weight\ttac\n";
    for (LossKind kind : {LossKind::SoftTAC, LossKind::CrossEntropy}) {
      const auto run = train(data, toy_config(kind));
      const double value = tac(data, LinearRewardModel(run.final_weights)).tac;
      r.checks.push_back(check(std::string(loss_name(kind)) + " TAC on clean fixture", "1", num(value),
                               value == 1.0));
      t << loss_name(kind) << '\t' << num(run.final_weights[0]) << '\t' << num(value) << '\n';
    }
    r.tables.push_back({"final", t.str()});
  });
}

StudyReport convergence() {
  return timed("convergence", [](StudyReport& r) {
    constexpr std::size_t kDatasets = 100;
    const double alphas[] = {1.0, 10.0, 100.0, 1000.0};
    std::size_t non_monotone = 0;
    double worst_final = 0.0, min_margin = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> gaps(4);
    for (std::size_t seed = 0; seed < kDatasets; ++seed) {
      SyntheticSpec s;
      s.dim = 2 + seed % 7;
      s.num_trajectories = 30;
      s.min_steps = 1;
      s.max_steps = 10;
      s.features = FeatureDistribution::uniform(-1.0, 1.0);
      s.true_weights = init_weights(s.dim, 500 + seed);
      s.num_preferences = 60;
      s.min_margin = 0.01;
      s.seed = seed;
      // Labels from the true weights with 20% corrupted, ties dropped: the
      // evaluated model (the true weights) is then imperfect but tie-free.
      auto noisy = corrupt_labels(generate_synthetic(s), NoiseSpec::uniform(0.2, seed)).dataset;
      std::vector<PreferenceRecord> kept;
      for (const auto& rec : noisy.records()) {
        if (rec.label != Label::Tie) kept.push_back(rec);
      }
      const auto data = noisy.with_records(std::move(kept));
      const LinearRewardModel model(s.true_weights);
      for (const auto& p : induce_preferences(model, data)) {
        min_margin = std::min(min_margin, std::abs(p.delta_return));
      }
      const double exact = tac(data, model).tac;
      double prev = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < 4; ++k) {
        const double g = std::abs(soft_tac(data, model, alphas[k]) - exact);
        gaps[k].push_back(g);
        if (g > prev) ++non_monotone;
        prev = g;
      }
      worst_final = std::max(worst_final, prev);
    }
    r.checks.push_back(check("min |dG| over all datasets", ">= 0.01", num(min_margin), min_margin >= 0.01));
    r.checks.push_back(check("datasets with a gap increase", "0", std::to_string(non_monotone),
                             non_monotone == 0));
    r.checks.push_back(check("max |soft_tac - tac| at alpha 1000", "<= 0.01", num(worst_final),
                             worst_final <= 0.01));
    std::ostringstream t;
    t << "alpha\tmean_gap\tmax_gap\n";
    for (std::size_t k = 0; k < 4; ++k) {
      t << num(alphas[k]) << '\t' << num(mean(gaps[k])) << '\t'
        << num(*std::max_element(gaps[k].begin(), gaps[k].end())) << '\n';
    }
    r.tables.push_back({"gap_by_alpha", t.str()});
  });
}

StudyReport realizable() {
  return timed("realizable", [](StudyReport& r) {
    struct Outcome {
      std::size_t dim;
      std::uint64_t seed;
      std::optional<double> best_tac;
      double loss_1000;
      std::size_t epochs;
    };
    constexpr std::size_t kSeeds = 20;
    const std::size_t dims[] = {2, 8};
    auto outcomes = parallel_map(2 * kSeeds, [&](std::size_t i) {
      const std::size_t dim = dims[i / kSeeds];
      const std::uint64_t seed = i % kSeeds;
      const auto data = generate_synthetic(property_data_spec(dim, 148, 60, seed));
      const auto run = train(data, property_train_config(LossKind::SoftTAC, seed, 2000));
      const auto pairs = compile_pairs(data, 1.0);
      const double l = evaluate_loss(LossKind::SoftTAC, pairs, run.final_weights, 1000.0).value;
      return Outcome{dim, seed, run.best.tac, l, run.stopped_at_epoch};
    });
    std::size_t tac_fail = 0, loss_fail = 0;
    double worst_loss = 0.0;
    std::ostringstream t;
    t << "dim\tseed\tbest_tac\tloss_alpha1000\tepochs\n";
    for (const auto& o : outcomes) {
      tac_fail += !(o.best_tac && *o.best_tac == 1.0);
      loss_fail += !(o.loss_1000 < 1e-3);
      worst_loss = std::max(worst_loss, o.loss_1000);
      t << o.dim << '\t' << o.seed << '\t' << (o.best_tac ? num(*o.best_tac) : "nan") << '\t'
        << num(o.loss_1000) << '\t' << o.epochs << '\n';
    }
    r.checks.push_back(check("runs with best TAC below 1", "0 of 40", std::to_string(tac_fail) + " of 40",
                             tac_fail == 0));
    r.checks.push_back(check("runs with loss at alpha 1000 >= 1e-3", "0 of 40",
                             std::to_string(loss_fail) + " of 40 (worst " + num(worst_loss) + ")",
                             loss_fail == 0));
    r.tables.push_back({"runs", t.str()});
  });
}

StudyReport noise_tolerance() {
  return timed("noise-tolerance", [](StudyReport& r) {
    constexpr std::size_t kSeeds = 20;
    struct Outcome {
      double soft;
      double ce;
    };
    auto outcomes = parallel_map(kSeeds, [](std::size_t seed) {
      const auto clean = generate_synthetic(property_data_spec(8, 300, 80, seed));
      const auto noisy = corrupt_labels(clean, NoiseSpec::uniform(0.3, seed + 77)).dataset;
      const auto pairs = compile_pairs(clean, 1.0);
      const auto st = train(noisy, property_train_config(LossKind::SoftTAC, seed, 500));
      const auto ce = train(noisy, property_train_config(LossKind::CrossEntropy, seed, 500));
      return Outcome{alignment_counts(pairs, st.final_weights).tau_b(),
                     alignment_counts(pairs, ce.final_weights).tau_b()};
    });
    std::vector<double> soft, ce;
    std::ostringstream t;
    t << "seed\tsoft_tac_clean_tac\tcross_entropy_clean_tac\n";
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      soft.push_back(outcomes[i].soft);
      ce.push_back(outcomes[i].ce);
      t << i << '\t' << num(outcomes[i].soft) << '\t' << num(outcomes[i].ce) << '\n';
    }
    const double ms = mean(soft), mc = mean(ce);
    r.checks.push_back(check("mean clean TAC, soft-tac", ">= 0.95", num(ms), ms >= 0.95));
    r.checks.push_back(check("mean clean TAC, soft-tac vs cross-entropy", ">= " + num(mc), num(ms), ms >= mc));
    r.tables.push_back({"clean_tac", t.str()});
  });
}

namespace {

// Labels from hidden weights with 10% corruption; 118 preferences; three
// reward models scattered around the hidden weights.
struct AblationSetup {
  PreferenceDataset data;
  std::vector<LinearRewardModel> models;
  std::size_t max_length = 0;
};

AblationSetup ablation_setup() {
  SyntheticSpec s;
  s.dim = 8;
  s.num_trajectories = 60;
  s.min_steps = 5;
  s.max_steps = 30;
  s.features = FeatureDistribution::uniform(-1.0, 1.0);
  s.true_weights = init_weights(8, 4242);
  s.num_preferences = 118;
  s.seed = 4242;
  auto data = corrupt_labels(generate_synthetic(s), NoiseSpec::uniform(0.1, 0)).dataset;
  auto models = sample_models(s.true_weights, 0.3, 3, 1.0, 9);
  std::size_t max_len = 0;
  for (const auto& t : data.trajectories()) max_len = std::max(max_len, t.length());
  return {std::move(data), std::move(models), max_len};
}

}  // namespace

StudyReport ablation_count() {
  return timed("ablation-count", [](StudyReport& r) {
    const auto setup = ablation_setup();
    const std::vector<std::size_t> sizes{25, 50, 75, 100};
    const auto rows = ablation_preference_count(setup.data, sizes, 30, setup.models, 7);
    for (std::size_t m = 0; m < setup.models.size(); ++m) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo, se25 = 0.0, se100 = 0.0;
      for (const auto& row : rows) {
        if (row.model != m) continue;
        lo = std::min(lo, row.mean);
        hi = std::max(hi, row.mean);
        if (row.parameter == 25) se25 = row.stderr_;
        if (row.parameter == 100) se100 = row.stderr_;
      }
      const std::string tag = "model " + std::to_string(m);
      r.checks.push_back(check(tag + " mean TAC spread across sizes", "<= 0.05", num(hi - lo), hi - lo <= 0.05));
      r.checks.push_back(check(tag + " SE at 100 vs SE at 25", "< " + num(se25), num(se100), se100 < se25));
    }
    std::ostringstream t;
    t << "model\t";
    std::ostringstream body;
    write_ablation_table(body, rows);
    // Prefix each data row with its model index.
    std::istringstream lines(body.str());
    std::string line;
    std::getline(lines, line);
    t << line << '\n';
    for (std::size_t i = 0; std::getline(lines, line); ++i) t << rows[i].model << '\t' << line << '\n';
    r.tables.push_back({"tac_by_count", t.str()});
  });
}

StudyReport ablation_length() {
  return timed("ablation-length", [](StudyReport& r) {
    const auto setup = ablation_setup();
    const auto& model = setup.models.front();
    const double full = tac(setup.data, model).tac;
    std::vector<std::size_t> lengths{1, 2, 5, 10, 20};
    lengths.push_back(setup.max_length);
    lengths.push_back(setup.max_length + 10);
    const auto rows = ablation_segment_length(setup.data, lengths, model);
    std::size_t mismatches = 0;
    for (const auto& row : rows) {
      if (row.parameter >= static_cast<double>(setup.max_length) && row.mean != full) ++mismatches;
    }
    r.checks.push_back(check("TAC at length >= max length equals full-trajectory TAC",
                             "0 mismatches (full " + num(full) + ")", std::to_string(mismatches) + " mismatches",
                             mismatches == 0));
    std::ostringstream t;
    write_ablation_table(t, rows);
    r.tables.push_back({"tac_by_length", t.str()});
  });
}

StudyReport gridworld_e2e() {
  return timed("gridworld-e2e", [](StudyReport& r) {
    const auto world = open_room_fixture();
    const auto expert = gridworld_expert_weights();
    std::ostringstream t;
    t << "seed\ttrajectories\tpreferences\tlearned_tac\tlearned_success\texpert_success\tweights\n";
    constexpr std::size_t kSeeds = 5;
    auto reports = parallel_map(kSeeds, [&](std::size_t seed) {
      PipelineConfig pc;
      pc.num_preferences = 148;
      pc.train = property_train_config(LossKind::SoftTAC, seed, 500);
      pc.seed = seed;
      return end_to_end(world, expert, pc);
    });
    for (std::size_t seed = 0; seed < kSeeds; ++seed) {
      const auto& rep = reports[seed];
      const std::string tag = "seed " + std::to_string(seed);
      r.checks.push_back(check(tag + " preferences", "148", std::to_string(rep.num_preferences),
                               rep.num_preferences == 148));
      r.checks.push_back(check(tag + " expert planner success", "1", num(rep.expert_success),
                               rep.expert_success == 1.0));
      r.checks.push_back(check(tag + " learned planner success", "1", num(rep.learned_success),
                               rep.learned_success == 1.0));
      t << seed << '\t' << rep.num_trajectories << '\t' << rep.num_preferences << '\t'
        << num(rep.learned_tac) << '\t' << num(rep.learned_success) << '\t' << num(rep.expert_success)
        << '\t';
      for (std::size_t k = 0; k < rep.learned_weights.size(); ++k) {
        t << (k ? "," : "") << num(rep.learned_weights[k]);
      }
      t << '\n';
    }
    r.tables.push_back({"runs", t.str()});
  });
}

const std::vector<std::string>& study_names() {
  static const std::vector<std::string> names{"toy-noisy",      "toy-clean",       "convergence",
                                              "realizable",     "noise-tolerance", "ablation-count",
                                              "ablation-length", "gridworld-e2e"};
  return names;
}

StudyReport run_study(const std::string& name) {
  if (name == "toy-noisy") return toy_noisy();
  if (name == "toy-clean") return toy_clean();
  if (name == "convergence") return convergence();
  if (name == "realizable") return realizable();
  if (name == "noise-tolerance") return noise_tolerance();
  if (name == "ablation-count") return ablation_count();
  if (name == "ablation-length") return ablation_length();
  if (name == "gridworld-e2e") return gridworld_e2e();
  std::string list;
  for (const auto& n : study_names()) list += (list.empty() ? "" : ", ") + n;
  throw InvalidArgument("unknown study '" + name + "' (valid: " + list + ")");
}

}  // namespace prefalign::studies
