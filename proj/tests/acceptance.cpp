// Runs the acceptance criteria; one PASS/FAIL line each, nonzero exit on any
// failure.

#include <sys/wait.h>

#include <cfloat>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "prefalign/alignment.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/losses.hpp"
#include "prefalign/studies.hpp"

using namespace prefalign;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int number, const std::string& name, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s  %2d %-22s %.2fs  %s\n", o.pass ? "PASS" : "FAIL", number, name.c_str(), s, o.detail.c_str());
  std::fflush(stdout);
}

// A study passes when all its checks pass and it beats the time limit.
Outcome study(const std::string& name, double limit_seconds) {
  const auto r = studies::run_study(name);
  std::ostringstream d;
  bool pass = r.passed() && r.seconds < limit_seconds;
  for (const auto& c : r.checks) {
    if (!c.pass) d << "[" << c.name << ": expected " << c.expected << ", observed " << c.observed << "] ";
  }
  if (r.seconds >= limit_seconds) d << "[runtime " << r.seconds << "s >= " << limit_seconds << "s] ";
  if (pass) d << r.checks.size() << " checks";
  return {pass, d.str()};
}

Outcome symmetry() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double z = u(rng);
    const double sum = soft_tac_sample_loss(z, -1) + soft_tac_sample_loss(z, 0) + soft_tac_sample_loss(z, 1);
    worst = std::max(worst, std::abs(sum - 3.0));
  }
  std::ostringstream d;
  d << "max |sum - 3| = " << worst;
  return {worst <= 4 * DBL_EPSILON, d.str()};
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(707);
  const oracle::TiePattern patterns[] = {oracle::TiePattern::None, oracle::TiePattern::InducedOnly,
                                         oracle::TiePattern::HumanOnly, oracle::TiePattern::Both,
                                         oracle::TiePattern::Mixed};
  int mismatches = 0, degenerate = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto c = oracle::random_tie_case(rng, patterns[i % 5]);
    const auto expected = oracle::tau_b(c.data, c.weights);
    std::optional<double> got;
    try {
      got = tac(c.data, LinearRewardModel(c.weights)).tac;
    } catch (const DegenerateDataset&) {
    }
    if (!expected) ++degenerate;
    if (expected != got) ++mismatches;
  }
  std::ostringstream d;
  d << mismatches << " mismatches over 1000 datasets (" << degenerate << " degenerate in both)";
  return {mismatches == 0, d.str()};
}

Outcome gradients() {
  std::mt19937_64 rng(808);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t d = 1 + rng() % 8;
    const auto batch = oracle::random_batch(rng, d, 1 + rng() % 16);
    std::vector<double> w(d);
    for (auto& x : w) x = std::normal_distribution<double>()(rng);
    const double alpha = std::uniform_real_distribution<double>(0.2, 3.0)(rng);
    for (LossKind kind : {LossKind::SoftTAC, LossKind::CrossEntropy}) {
      auto f = [&](const std::vector<double>& x) {
        const LinearRewardModel m(x);
        return kind == LossKind::SoftTAC ? soft_tac_loss(m, batch, alpha).value
                                         : cross_entropy_loss(m, batch, alpha).value;
      };
      const LinearRewardModel m(w);
      const auto g = kind == LossKind::SoftTAC ? soft_tac_loss(m, batch, alpha).gradient
                                               : cross_entropy_loss(m, batch, alpha).gradient;
      worst = std::max(worst, oracle::rel_error(g, oracle::central_diff(f, w, 1e-5)));
    }
  }
  std::ostringstream d;
  d << "max relative error " << worst;
  return {worst <= 1e-5, d.str()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + PREFALIGN_CLI + "\" " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return "<missing>";
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const auto dir = fs::temp_directory_path() / ("prefalign-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  const std::string prefs = std::string(PREFALIGN_SOURCE_DIR) + "/data/toy/toy-noisy.prefs.jsonl";
  const std::string flags = "train --prefs " + prefs +
                            " --loss soft-tac --optimizer adam --protocol-lrs --grid-batch 1,2 --epochs 30 --seed 11";
  for (const char* sub : {"a", "b"}) {
    if (run_cli(flags + " --out " + (dir / sub).string()) != 0) {
      fs::remove_all(dir);
      return {false, "train exited nonzero"};
    }
  }
  std::string differing;
  for (const char* f : {"weights.json", "trace.tsv", "grid.tsv"}) {
    if (slurp(dir / "a" / f) != slurp(dir / "b" / f) || slurp(dir / "a" / f) == "<missing>") {
      differing += std::string(f) + " ";
    }
  }
  fs::remove_all(dir);
  if (!differing.empty()) return {false, "differs: " + differing};
  return {true, "weights.json, trace.tsv, grid.tsv identical"};
}

}  // namespace

int main() {
  report(1, "toy-noisy", [] { return study("toy-noisy", 1.0); });
  report(2, "toy-clean", [] { return study("toy-clean", 1.0); });
  report(3, "soft-tac-convergence", [] { return study("convergence", 5.0); });
  report(4, "realizable", [] { return study("realizable", 30.0); });
  report(5, "noise-tolerance", [] { return study("noise-tolerance", 60.0); });
  report(6, "symmetry-constant", symmetry);
  report(7, "oracle-equivalence", oracle_equivalence);
  report(8, "gradients", gradients);
  report(9, "gridworld-e2e", [] { return study("gridworld-e2e", 60.0); });
  report(10, "ablation-shapes", [] {
    auto a = study("ablation-count", 120.0), b = study("ablation-length", 120.0);
    return Outcome{a.pass && b.pass, "count: " + a.detail + "; length: " + b.detail};
  });
  report(11, "determinism", determinism);
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
