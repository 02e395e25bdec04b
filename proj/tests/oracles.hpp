#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the alignment or loss code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "prefalign/reward_core.hpp"

namespace oracle {

inline int sign(double x) { return (x > 0) - (x < 0); }

// Plain sum_t gamma^t theta . phi_t, stepping gamma^t by repeated products.
inline double slow_return(const prefalign::Trajectory& t, const std::vector<double>& w, double gamma) {
  double g = 0.0, disc = 1.0;
  for (const auto& step : t.steps()) {
    double r = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) r += w[k] * step[k];
    g += disc * r;
    disc *= gamma;
  }
  return g;
}

// Textbook Tau-b over n paired observations:
// (n_c - n_d) / sqrt((n0 - n1)(n0 - n2)), n1 / n2 = pairs tied in each variable.
inline std::optional<double> tau_b(const std::vector<int>& human, const std::vector<int>& induced) {
  long nc = 0, nd = 0, n1 = 0, n2 = 0;
  const long n0 = static_cast<long>(human.size());
  for (std::size_t i = 0; i < human.size(); ++i) {
    if (human[i] == 0) ++n1;
    if (induced[i] == 0) ++n2;
    if (human[i] != 0 && induced[i] != 0) (human[i] == induced[i] ? nc : nd)++;
  }
  if (n0 - n1 == 0 || n0 - n2 == 0) return std::nullopt;
  return static_cast<double>(nc - nd) /
         std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

inline std::optional<double> tau_b(const prefalign::PreferenceDataset& data, const std::vector<double>& w,
                                   double gamma = 1.0) {
  std::vector<int> h, m;
  for (const auto& r : data.records()) {
    h.push_back(prefalign::to_int(r.label));
    m.push_back(sign(slow_return(data.trajectory(r.left), w, gamma) -
                     slow_return(data.trajectory(r.right), w, gamma)));
  }
  return tau_b(h, m);
}

enum class TiePattern { None, InducedOnly, HumanOnly, Both, Mixed };

struct TieCase {
  prefalign::PreferenceDataset data;
  std::vector<double> weights;
};

// Small integer-featured datasets so return ties happen exactly. The pattern
// controls which tie classes are forced to appear.
inline TieCase random_tie_case(std::mt19937_64& rng, TiePattern pattern) {
  using namespace prefalign;
  std::uniform_int_distribution<int> dim_d(1, 3), nt_d(3, 8), val(-2, 2), np_d(1, 20), lab(-1, 1);
  const int d = dim_d(rng);
  const int nt = nt_d(rng);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < nt; ++i) {
    std::vector<FeatureVector> steps(1 + rng() % 3, FeatureVector(d));
    for (auto& s : steps)
      for (auto& v : s) v = val(rng);
    trajs.emplace_back("t" + std::to_string(i), std::move(steps));
  }
  std::vector<double> w(d);
  for (auto& x : w) x = val(rng);
  if (pattern == TiePattern::InducedOnly || pattern == TiePattern::Both) w[0] = 0.0;

  auto ret = [&](int i) { return slow_return(trajs[i], w, 1.0); };
  std::vector<PreferenceRecord> recs;
  std::vector<std::pair<int, int>> used;
  const int np = np_d(rng);
  for (int k = 0; k < np * 4 && static_cast<int>(recs.size()) < np; ++k) {
    int a = static_cast<int>(rng() % nt), b = static_cast<int>(rng() % nt);
    if (a == b) continue;
    bool dup = false;
    for (auto [x, y] : used) dup = dup || (x == a && y == b) || (x == b && y == a);
    if (dup) continue;
    int y = lab(rng);
    const int s = sign(ret(a) - ret(b));
    switch (pattern) {
      case TiePattern::InducedOnly:  // human strict everywhere
        if (y == 0) y = 1;
        break;
      case TiePattern::HumanOnly:  // human ties only where the model is strict
        if (s == 0 && y == 0) y = -1;
        if (s != 0 && rng() % 2) y = 0;
        break;
      case TiePattern::Both:
        if (s == 0 && rng() % 2) y = 0;
        break;
      case TiePattern::None:
        if (y == 0) y = s == 0 ? 1 : s;
        break;
      case TiePattern::Mixed:
        break;
    }
    used.emplace_back(a, b);
    recs.push_back({trajs[a].id(), trajs[b].id(), label_from_int(y)});
  }
  if (recs.empty()) recs.push_back({trajs[0].id(), trajs[1].id(), Label::LeftPreferred});
  return {PreferenceDataset(std::move(trajs), std::move(recs)), std::move(w)};
}

// Central differences of a scalar function of a vector.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double x0 = x[k];
    x[k] = x0 + h;
    const double up = f(x);
    x[k] = x0 - h;
    const double down = f(x);
    x[k] = x0;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  // Below 1e-6 the central difference is roundoff noise, so the error is
  // measured against that floor instead (saturated tanh gives ~1e-14).
  const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-6});
  return std::sqrt(diff) / scale;
}

// Random batch of n pairs with N(0, 0.5^2) features and
// uniformly drawn labels.
inline prefalign::PreferenceDataset random_batch(std::mt19937_64& rng, std::size_t d, std::size_t n) {
  using namespace prefalign;
  std::normal_distribution<double> feat(0.0, 0.5);
  std::vector<Trajectory> ts;
  for (std::size_t i = 0; i < 2 * n; ++i) {
    std::vector<FeatureVector> steps(1 + rng() % 4, FeatureVector(d));
    for (auto& s : steps)
      for (auto& v : s) v = feat(rng);
    ts.emplace_back("t" + std::to_string(i), std::move(steps));
  }
  std::vector<PreferenceRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    recs.push_back({ts[2 * i].id(), ts[2 * i + 1].id(), label_from_int(static_cast<int>(rng() % 3) - 1)});
  }
  return PreferenceDataset(std::move(ts), std::move(recs));
}

}  // namespace oracle
