#include "prefalign/datalab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "prefalign/alignment.hpp"
#include "prefalign/errors.hpp"

namespace prefalign {

using nlohmann::json;

namespace {

// Reads non-blank lines as JSON objects, tracking 1-based line numbers.
class JsonLines {
 public:
  explicit JsonLines(std::istream& in) : in_(in) {}

  bool next(json& out) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        out = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError("line " + std::to_string(line_) + ": invalid JSON (" + e.what() + ")",
                         line_);
      }
      if (!out.is_object()) {
        throw ParseError("line " + std::to_string(line_) + ": expected a JSON object", line_);
      }
      return true;
    }
    return false;
  }

  std::size_t line() const noexcept { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

template <typename Fn>
auto at_line(std::size_t line, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ParseError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError("line " + std::to_string(line) + ": " + e.what(), line);
  } catch (const Error& e) {
    throw ParseError("line " + std::to_string(line) + ": " + e.what(), line);
  }
}

void check_format(const json& header, const char* expected, std::size_t line) {
  if (!header.contains("format") || header.at("format") != expected) {
    throw ParseError("line " + std::to_string(line) + ": header must declare format \"" +
                         expected + "\"",
                     line);
  }
  if (header.value("version", 0) != kFormatVersion) {
    throw ParseError("line " + std::to_string(line) + ": unsupported format version", line);
  }
}

std::string dump_line(const json& j) {
  // Keep non-ASCII ids intact; replace invalid UTF-8 rather than throw.
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace

json trajectory_to_json(const Trajectory& traj) {
  json j;
  j["id"] = traj.id();
  j["metadata"] = json::object();
  for (const auto& [k, v] : traj.metadata()) j["metadata"][k] = v;
  j["steps"] = traj.steps();
  return j;
}

Trajectory trajectory_from_json(const json& j) {
  Metadata metadata;
  if (j.contains("metadata")) {
    for (const auto& [k, v] : j.at("metadata").items()) metadata[k] = v.get<std::string>();
  }
  return Trajectory(j.at("id").get<std::string>(),
                    j.at("steps").get<std::vector<FeatureVector>>(), std::move(metadata));
}

json record_to_json(const PreferenceRecord& rec) {
  return json{{"label", to_int(rec.label)}, {"left", rec.left}, {"right", rec.right}};
}

PreferenceRecord record_from_json(const json& j) {
  const auto& label = j.at("label");
  if (!label.is_number_integer()) throw ValidationError("label must be an integer in {-1, 0, 1}");
  return {j.at("left").get<std::string>(), j.at("right").get<std::string>(),
          label_from_int(label.get<int>())};
}

TrajectoryFile read_trajectories(std::istream& in) {
  JsonLines lines(in);
  json j;
  if (!lines.next(j)) throw ParseError("trajectory file is empty", 0);
  TrajectoryFile file;
  at_line(lines.line(), [&] {
    check_format(j, kTrajectoryFormat, lines.line());
    file.dim = j.at("dim").get<std::size_t>();
    file.gamma_default = j.at("gamma_default").get<double>();
    if (!(file.gamma_default >= 0.0 && file.gamma_default <= 1.0)) {
      throw ValidationError("gamma_default must lie in [0, 1]");
    }
  });
  while (lines.next(j)) {
    file.trajectories.push_back(at_line(lines.line(), [&] {
      Trajectory traj = trajectory_from_json(j);
      if (traj.dim() != file.dim) {
        throw ValidationError("trajectory '" + traj.id() + "' has dimension " +
                              std::to_string(traj.dim()) + ", header declares " +
                              std::to_string(file.dim));
      }
      return traj;
    }));
  }
  return file;
}

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories,
                        double gamma_default) {
  const std::size_t dim = trajectories.empty() ? 0 : trajectories.front().dim();
  json header{{"dim", dim},
              {"format", kTrajectoryFormat},
              {"gamma_default", gamma_default},
              {"version", kFormatVersion}};
  out << dump_line(header) << '\n';
  for (const auto& traj : trajectories) out << dump_line(trajectory_to_json(traj)) << '\n';
}

PreferenceFile read_preferences(std::istream& in) {
  JsonLines lines(in);
  json j;
  if (!lines.next(j)) throw ParseError("preference file is empty", 0);
  PreferenceFile file;
  at_line(lines.line(), [&] {
    check_format(j, kPreferenceFormat, lines.line());
    file.trajectories_path = j.at("trajectories").get<std::string>();
  });
  while (lines.next(j)) {
    file.records.push_back(at_line(lines.line(), [&] { return record_from_json(j); }));
  }
  return file;
}

void write_preferences(std::ostream& out, const std::vector<PreferenceRecord>& records,
                       const std::string& trajectories_path) {
  json header{{"format", kPreferenceFormat},
              {"trajectories", trajectories_path},
              {"version", kFormatVersion}};
  out << dump_line(header) << '\n';
  for (const auto& rec : records) out << dump_line(record_to_json(rec)) << '\n';
}

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'", 0);
  return in;
}

// Prefixes the file name onto parse/validation errors.
template <typename Fn>
auto in_file(const std::filesystem::path& path, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

}  // namespace

LoadedDataset load_dataset(const std::filesystem::path& preferences,
                           const std::optional<std::filesystem::path>& trajectories_override) {
  auto pin = open_input(preferences);
  PreferenceFile prefs = in_file(preferences, [&] { return read_preferences(pin); });
  const std::filesystem::path traj_path =
      trajectories_override ? *trajectories_override
                            : preferences.parent_path() / prefs.trajectories_path;
  auto tin = open_input(traj_path);
  TrajectoryFile trajs = in_file(traj_path, [&] { return read_trajectories(tin); });
  try {
    return {PreferenceDataset(std::move(trajs.trajectories), std::move(prefs.records)),
            trajs.gamma_default};
  } catch (const ValidationError& e) {
    throw ValidationError(preferences.string() + ": " + e.what());
  }
}

std::filesystem::path save_dataset(const std::filesystem::path& dir, const std::string& stem,
                                   const PreferenceDataset& data, double gamma_default) {
  std::filesystem::create_directories(dir);
  const std::string traj_name = stem + ".traj.jsonl";
  const auto prefs_path = dir / (stem + ".prefs.jsonl");
  {
    std::ofstream out(dir / traj_name, std::ios::binary);
    write_trajectories(out, data.trajectories(), gamma_default);
    if (!out) throw Error("io_error", "failed writing " + (dir / traj_name).string());
  }
  {
    std::ofstream out(prefs_path, std::ios::binary);
    write_preferences(out, data.records(), traj_name);
    if (!out) throw Error("io_error", "failed writing " + prefs_path.string());
  }
  return prefs_path;
}

json dataset_to_json(const PreferenceDataset& data) {
  json j;
  j["trajectories"] = json::array();
  for (const auto& t : data.trajectories()) j["trajectories"].push_back(trajectory_to_json(t));
  j["preferences"] = json::array();
  for (const auto& r : data.records()) j["preferences"].push_back(record_to_json(r));
  return j;
}

PreferenceDataset dataset_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("dataset must be a JSON object");
  if (!j.contains("trajectories") || !j.at("trajectories").is_array()) {
    throw ValidationError("dataset.trajectories must be an array");
  }
  if (!j.contains("preferences") || !j.at("preferences").is_array()) {
    throw ValidationError("dataset.preferences must be an array");
  }
  std::vector<Trajectory> trajectories;
  std::size_t i = 0;
  try {
    for (const auto& t : j.at("trajectories")) {
      trajectories.push_back(trajectory_from_json(t));
      ++i;
    }
  } catch (const json::exception& e) {
    throw ValidationError("trajectory " + std::to_string(i) + ": " + e.what());
  }
  std::vector<PreferenceRecord> records;
  i = 0;
  try {
    for (const auto& r : j.at("preferences")) {
      records.push_back(record_from_json(r));
      ++i;
    }
  } catch (const json::exception& e) {
    throw ValidationError("preference record " + std::to_string(i) + ": " + e.what());
  }
  return PreferenceDataset(std::move(trajectories), std::move(records));
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (dim < 1) throw InvalidArgument("synthetic: dim must be at least 1");
  if (num_trajectories < 2) throw InvalidArgument("synthetic: need at least two trajectories");
  if (min_steps < 1 || min_steps > max_steps) {
    throw InvalidArgument("synthetic: steps range must satisfy 1 <= min <= max");
  }
  if (true_weights.size() != dim) {
    throw DimensionMismatch("synthetic: true_weights length must equal dim");
  }
  const std::size_t pairs = num_trajectories * (num_trajectories - 1) / 2;
  if (num_preferences > pairs) {
    throw InvalidArgument("synthetic: " + std::to_string(num_preferences) +
                          " preferences requested but only " + std::to_string(pairs) +
                          " distinct pairs exist");
  }
  if (features.kind == FeatureDistribution::Kind::Uniform && !(features.lo < features.hi)) {
    throw InvalidArgument("synthetic: uniform feature range must satisfy lo < hi");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("synthetic: gamma must lie in [0, 1]");
}

PreferenceDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> length(spec.min_steps, spec.max_steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(spec.features.lo, spec.features.hi);

  const int width = static_cast<int>(std::to_string(spec.num_trajectories - 1).size());
  std::vector<Trajectory> trajectories;
  trajectories.reserve(spec.num_trajectories);
  for (std::size_t i = 0; i < spec.num_trajectories; ++i) {
    std::vector<FeatureVector> steps(length(rng), FeatureVector(spec.dim));
    for (auto& step : steps) {
      for (double& x : step) {
        x = spec.features.kind == FeatureDistribution::Kind::StandardNormal ? normal(rng)
                                                                            : uniform(rng);
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "t%0*zu", width, i);
    trajectories.emplace_back(id, std::move(steps), Metadata{{"source", "synthetic"}});
  }

  const LinearRewardModel truth(spec.true_weights, spec.gamma);
  std::vector<double> returns;
  returns.reserve(trajectories.size());
  for (const auto& t : trajectories) returns.push_back(discounted_return(truth, t));

  // Every unordered pair in random order; walk it, skipping pairs that land
  // exactly on zero or inside the margin band.
  const std::size_t n = trajectories.size();
  std::vector<std::pair<std::size_t, std::size_t>> candidates;
  candidates.reserve(n * (n - 1) / 2);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) candidates.emplace_back(a, b);
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const bool all_zero = std::all_of(spec.true_weights.begin(), spec.true_weights.end(),
                                    [](double w) { return w == 0.0; });

  std::bernoulli_distribution swap(0.5);
  std::vector<PreferenceRecord> records;
  records.reserve(spec.num_preferences);
  for (const auto& [a, b] : candidates) {
    if (records.size() == spec.num_preferences) break;
    auto [i, j] = swap(rng) ? std::make_pair(b, a) : std::make_pair(a, b);
    const double delta = returns[i] - returns[j];
    const Label label = verdict_for(delta, spec.tie_epsilon);
    if (!all_zero) {
      if (spec.tie_epsilon == 0.0 && delta == 0.0) continue;
      if (label != Label::Tie && std::abs(delta) < spec.min_margin) continue;
    }
    records.push_back({trajectories[i].id(), trajectories[j].id(), label});
  }
  if (records.size() < spec.num_preferences) {
    throw InvalidArgument("synthetic: only " + std::to_string(records.size()) +
                          " pairs satisfy the margin constraints, " +
                          std::to_string(spec.num_preferences) + " requested");
  }
  return PreferenceDataset(std::move(trajectories), std::move(records));
}

// ---------------------------------------------------------------------------

namespace {

void require_rate(double rate) {
  if (!(rate >= 0.0 && rate < kMaxNoiseRate)) {
    std::ostringstream msg;
    msg << "noise rate " << rate << " outside [0, 2/3)";
    throw InvalidArgument(msg.str());
  }
}

}  // namespace

CorruptedDataset corrupt_labels(const PreferenceDataset& data, const NoiseSpec& noise) {
  if (!noise.rate_function) require_rate(noise.rate);
  std::mt19937_64 rng(noise.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  std::vector<PreferenceRecord> records = data.records();
  std::vector<bool> flipped(records.size(), false);
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& rec = records[i];
    double rate = noise.rate;
    if (noise.rate_function) {
      rate = noise.rate_function(data.trajectory(rec.left), data.trajectory(rec.right));
      require_rate(rate);
    }
    // Draw both variates unconditionally so record i's outcome does not
    // depend on earlier rates.
    const double u = unit(rng);
    const bool pick_first = coin(rng);
    if (u >= rate) continue;
    const int current = to_int(rec.label);
    int others[2];
    int k = 0;
    for (int y : {-1, 0, 1}) {
      if (y != current) others[k++] = y;
    }
    rec.label = static_cast<Label>(pick_first ? others[0] : others[1]);
    flipped[i] = true;
  }
  return {data.with_records(std::move(records)), std::move(flipped)};
}

PreferenceDataset toy_fixture(bool noisy) {
  std::vector<Trajectory> items;
  for (int i = 0; i <= 4; ++i) {
    items.emplace_back("item" + std::to_string(i),
                       std::vector<FeatureVector>{{static_cast<double>(i)}},
                       Metadata{{"source", "toy"}});
  }
  std::vector<PreferenceRecord> records{
      {"item0", "item1", Label::RightPreferred},
      {"item1", "item2", Label::RightPreferred},
      {"item2", "item3", Label::RightPreferred},
      {"item3", "item4", Label::RightPreferred},
  };
  if (noisy) records.push_back({"item2", "item4", Label::LeftPreferred});
  return PreferenceDataset(std::move(items), std::move(records));
}

// ---------------------------------------------------------------------------

std::vector<LinearRewardModel> sample_models(const std::vector<double>& center, double scale,
                                             std::size_t count, double gamma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<LinearRewardModel> models;
  models.reserve(count);
  for (std::size_t m = 0; m < count; ++m) {
    std::vector<double> w = center;
    for (double& x : w) x += normal(rng);
    models.emplace_back(std::move(w), gamma);
  }
  return models;
}

namespace {

AblationRow summarize(std::size_t model, double parameter, const std::vector<double>& values) {
  AblationRow row{model, parameter, 0.0, 0.0, values.size()};
  if (values.empty()) return row;
  row.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - row.mean) * (v - row.mean);
    row.stderr_ = std::sqrt(ss / (values.size() - 1)) / std::sqrt(double(values.size()));
  }
  return row;
}

}  // namespace

std::vector<AblationRow> ablation_preference_count(const PreferenceDataset& data,
                                                   const std::vector<std::size_t>& sizes,
                                                   std::size_t repeats,
                                                   const std::vector<LinearRewardModel>& models,
                                                   std::uint64_t seed, double tie_epsilon) {
  if (repeats < 2) throw InvalidArgument("ablation: repeats must be at least 2");
  for (std::size_t s : sizes) {
    if (s == 0 || s > data.size()) {
      throw InvalidArgument("ablation: subset size " + std::to_string(s) +
                            " exceeds dataset size " + std::to_string(data.size()));
    }
  }
  std::vector<PairTable> tables;
  for (const auto& m : models) {
    require_same_dim(data.dim(), m.dim(), "ablation_preference_count");
    tables.push_back(compile_pairs(data, m.gamma()));
  }

  std::mt19937_64 rng(seed);
  // values[model][size]
  std::vector<std::vector<std::vector<double>>> values(
      models.size(), std::vector<std::vector<double>>(sizes.size()));
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    for (std::size_t r = 0; r < repeats; ++r) {
      std::vector<std::size_t> picked;
      std::sample(all.begin(), all.end(), std::back_inserter(picked), sizes[s], rng);
      for (std::size_t m = 0; m < models.size(); ++m) {
        AlignmentCounts counts;
        for (std::size_t i : picked) {
          const Label induced =
              verdict_for(tables[m].delta_return(i, models[m].weights()), tie_epsilon);
          counts.add(classify(static_cast<Label>(tables[m].label[i]), induced));
        }
        if (counts.defined()) values[m][s].push_back(counts.tau_b());
      }
    }
  }

  std::vector<AblationRow> rows;
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      rows.push_back(summarize(m, static_cast<double>(sizes[s]), values[m][s]));
    }
  }
  return rows;
}

PreferenceDataset truncate_trajectories(const PreferenceDataset& data, std::size_t length) {
  std::vector<Trajectory> cut;
  cut.reserve(data.trajectories().size());
  for (const auto& t : data.trajectories()) cut.push_back(t.truncated(length));
  return PreferenceDataset(std::move(cut), data.records());
}

std::vector<AblationRow> ablation_segment_length(const PreferenceDataset& data,
                                                 const std::vector<std::size_t>& lengths,
                                                 const LinearRewardModel& model,
                                                 double tie_epsilon) {
  std::vector<AblationRow> rows;
  for (std::size_t length : lengths) {
    if (length == 0) throw InvalidArgument("ablation: segment lengths must be positive");
    const AlignmentReport report = tac(truncate_trajectories(data, length), model, tie_epsilon);
    rows.push_back({0, static_cast<double>(length), report.tac, 0.0, 1});
  }
  return rows;
}

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "parameter\tmean\tstderr\tn\n";
  char buf[128];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%.6g\t%.6g\t%.6g\t%zu\n", row.parameter, row.mean,
                  row.stderr_, row.n);
    out << buf;
  }
}

}  // namespace prefalign
