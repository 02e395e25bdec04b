#include "prefalign/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "httplib.h"

#include "prefalign/datalab.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/losses.hpp"

namespace prefalign::service {

namespace {

constexpr const char* kSessionFileSuffix = ".session.jsonl";

class NotFound : public Error {
 public:
  explicit NotFound(const std::string& message) : Error("not_found", message) {}
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<double> weights_from_json(const json& j, const char* field) {
  if (!j.is_array()) throw ValidationError(std::string(field) + " must be an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw ValidationError(std::string(field) + " must contain only numbers");
    double x = v.get<double>();
    if (!std::isfinite(x)) throw ValidationError(std::string(field) + " must be finite");
    out.push_back(x);
  }
  return out;
}

template <typename T>
T field_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("field '") + key + "' has the wrong type");
  }
}

int status_for(const std::string& code) {
  if (code == "not_found") return 404;
  if (code == "method_not_allowed") return 405;
  if (code == "training_error" || code == "degenerate_dataset") return 422;
  if (code == "internal_error" || code == "io_error") return 500;
  return 400;
}

ApiResponse failure(const Error& e, json detail = json::object()) {
  if (const auto* pe = dynamic_cast<const ParseError*>(&e); pe && pe->line() > 0) {
    detail["line"] = pe->line();
  }
  if (const auto* se = dynamic_cast<const StageError*>(&e)) detail["stage"] = se->stage();
  return {status_for(e.code()), error_body(e.code(), e.what(), std::move(detail))};
}

json warning_json(const Warning& w) { return {{"code", w.code}, {"message", w.message}}; }

TrainConfig config_from_json(const json& j, double gamma, double tie_epsilon) {
  if (!j.is_object()) throw ValidationError("config must be an object");
  TrainConfig c;
  c.gamma = gamma;
  c.tie_epsilon = tie_epsilon;
  c.loss = parse_loss_kind(field_or<std::string>(j, "loss", loss_name(c.loss)));
  c.optimizer = parse_optimizer_kind(field_or<std::string>(j, "optimizer", optimizer_name(c.optimizer)));
  c.alpha = field_or(j, "alpha", c.alpha);
  c.learning_rate = field_or(j, "learning_rate", c.learning_rate);
  c.batch_size = field_or(j, "batch_size", c.batch_size);
  c.max_epochs = field_or(j, "max_epochs", c.max_epochs);
  c.patience = field_or(j, "patience", c.patience);
  c.loss_delta = field_or(j, "loss_delta", c.loss_delta);
  c.seed = field_or<std::uint64_t>(j, "seed", 0);
  c.validation_fraction = field_or(j, "validation_fraction", c.validation_fraction);
  c.shuffle = field_or(j, "shuffle", c.shuffle);
  if (j.contains("clip_low") && !j["clip_low"].is_null()) c.clip_low = field_or(j, "clip_low", 0.0);
  if (j.contains("clip_high") && !j["clip_high"].is_null()) c.clip_high = field_or(j, "clip_high", 0.0);
  if (j.contains("initial_weights") && !j["initial_weights"].is_null()) {
    c.initial_weights = weights_from_json(j["initial_weights"], "initial_weights");
  }
  c.validate();
  return c;
}

json metrics_json(const EpochMetrics& m, Condition condition) {
  json j{{"epoch", m.epoch}, {"accuracy", m.accuracy}, {"loss", m.loss}, {"weights", m.weights}};
  if (condition == Condition::Alignment) {
    j["tac"] = m.tac ? json(*m.tac) : json(nullptr);
  }
  return j;
}

json run_json(const TrainRun& run, Condition condition) {
  json j{{"loss", loss_name(run.config.loss)},
         {"optimizer", optimizer_name(run.config.optimizer)},
         {"learning_rate", run.config.learning_rate},
         {"batch_size", run.config.batch_size},
         {"alpha", run.config.alpha},
         {"seed", run.config.seed},
         {"stopped_at_epoch", run.stopped_at_epoch},
         {"stop_reason", stop_reason_name(run.stop_reason)},
         {"best", metrics_json(run.best, condition)},
         {"initial", metrics_json(run.initial, condition)}};
  return j;
}

// Recursively removes any "tac" key; a belt-and-braces guard on Control output.
void strip_tac(json& j) {
  if (j.is_object()) {
    j.erase("tac");
    for (auto& [_, v] : j.items()) strip_tac(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_tac(v);
  }
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

}  // namespace

const char* condition_name(Condition c) noexcept {
  return c == Condition::Control ? "Control" : "Alignment";
}

Condition parse_condition(const std::string& name) {
  auto n = lower(name);
  if (n == "control") return Condition::Control;
  if (n == "alignment") return Condition::Alignment;
  throw ValidationError("unknown condition '" + name + "' (expected Control or Alignment)");
}

std::string utc_now() {
  using namespace std::chrono;
  auto now = system_clock::now();
  auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  std::time_t t = system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

json error_body(const std::string& code, const std::string& message, json detail) {
  return {{"code", code}, {"message", message}, {"detail", std::move(detail)}};
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> pick_display(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (count == 0 || count >= n) return all;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  std::sample(all.begin(), all.end(), std::back_inserter(out), count, rng);
  return out;
}

}  // namespace

Session::Session(std::string id, PreferenceDataset dataset, SessionOptions options,
                 std::string created_at)
    : id_(std::move(id)),
      dataset_(std::move(dataset)),
      options_(std::move(options)),
      created_at_(std::move(created_at)),
      display_(pick_display(dataset_.size(), options_.display_count, options_.seed)),
      scoring_(options_.score_on_display ? display_ : pick_display(dataset_.size(), 0, 0)),
      scoring_data_(dataset_.subset(scoring_)) {
  if (!(options_.gamma >= 0.0 && options_.gamma <= 1.0)) {
    throw ValidationError("gamma must lie in [0, 1]");
  }
  if (!(options_.tie_epsilon >= 0.0) || !std::isfinite(options_.tie_epsilon)) {
    throw ValidationError("tie_epsilon must be finite and non-negative");
  }
  if (options_.feature_names.empty()) {
    for (std::size_t i = 0; i < dataset_.dim(); ++i) {
      options_.feature_names.push_back("f" + std::to_string(i));
    }
  } else if (options_.feature_names.size() != dataset_.dim()) {
    throw DimensionMismatch("feature_names has " + std::to_string(options_.feature_names.size()) +
                            " entries for a " + std::to_string(dataset_.dim()) +
                            "-dimensional dataset");
  }
}

Iteration Session::score(const std::vector<double>& weights) const {
  require_same_dim(dataset_.dim(), weights.size(), "weights");
  LinearRewardModel model(weights, options_.gamma);
  Iteration it;
  it.weights = weights;
  const auto& recs = scoring_data_.records();
  it.per_pair.reserve(recs.size());
  std::size_t agree = 0;
  for (std::size_t k = 0; k < recs.size(); ++k) {
    const auto& r = recs[k];
    PairRow row;
    row.record = scoring_[k];
    row.left = r.left;
    row.right = r.right;
    row.left_return = discounted_return(model, dataset_.trajectory(r.left));
    row.right_return = discounted_return(model, dataset_.trajectory(r.right));
    row.expert = r.label;
    row.induced = verdict_for(row.left_return - row.right_return, options_.tie_epsilon);
    row.agrees = row.induced == row.expert;
    agree += row.agrees;
    it.per_pair.push_back(std::move(row));
  }
  it.accuracy = recs.empty() ? 0.0 : static_cast<double>(agree) / static_cast<double>(recs.size());
  if (options_.condition == Condition::Alignment) {
    try {
      it.tac = tac(scoring_data_, model, options_.tie_epsilon).tac;
    } catch (const DegenerateDataset& e) {
      it.warnings.push_back({e.code(), e.what()});
    }
  }
  return it;
}

Iteration Session::append_iteration(const std::vector<double>& weights, const std::string& now) {
  Iteration it = score(weights);
  std::lock_guard lock(mutex_);
  it.index = iterations_.size();
  it.submitted_at = now;
  if (on_append) {
    json rec = iteration_json(it, Condition::Alignment);
    rec["type"] = "iteration";
    on_append(rec);
  }
  iterations_.push_back(it);
  return it;
}

TrainResult Session::append_training(const TrainConfig& config,
                                     const std::vector<double>& grid_learning_rates,
                                     const std::vector<std::size_t>& grid_batch_sizes,
                                     const std::string& now) {
  // Training is a mutating call, so it holds the session lock for its whole
  // duration; reads of the iteration list wait behind it.
  std::lock_guard lock(mutex_);
  json summary;
  std::vector<double> learned;
  const Condition cond = options_.condition;
  try {
    if (!grid_learning_rates.empty() || !grid_batch_sizes.empty()) {
      std::vector<double> lrs = grid_learning_rates;
      std::vector<std::size_t> batches = grid_batch_sizes;
      if (lrs.empty()) lrs.push_back(config.learning_rate);
      if (batches.empty()) batches.push_back(config.batch_size);
      GridResult grid = grid_search(scoring_data_, lrs, batches, config);
      json cells = json::array();
      for (const auto& cell : grid.cells) {
        json c{{"learning_rate", cell.learning_rate}, {"batch_size", cell.batch_size}};
        if (cell.run) {
          c["best"] = metrics_json(cell.run->best, cond);
          c["stopped_at_epoch"] = cell.run->stopped_at_epoch;
        } else {
          c["error"] = cell.error;
        }
        cells.push_back(std::move(c));
      }
      summary = run_json(grid.best(), cond);
      summary["grid"] = std::move(cells);
      summary["best_cell"] = grid.best_index;
      learned = grid.best().final_weights;
    } else {
      TrainRun run = train(scoring_data_, config);
      summary = run_json(run, cond);
      learned = run.final_weights;
    }
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError("train", e);
  }
  if (cond == Condition::Control) strip_tac(summary);
  TrainResult result;
  result.index = training_.size();
  result.summary = std::move(summary);
  result.weights = std::move(learned);
  result.submitted_at = now;
  if (on_append) {
    json rec{{"type", "train"},
             {"index", result.index},
             {"summary", result.summary},
             {"weights", result.weights},
             {"submitted_at", result.submitted_at}};
    on_append(rec);
  }
  training_.push_back(result);
  return result;
}

std::vector<Iteration> Session::iterations() const {
  std::lock_guard lock(mutex_);
  return iterations_;
}

std::vector<TrainResult> Session::training_results() const {
  std::lock_guard lock(mutex_);
  return training_;
}

std::size_t Session::iteration_count() const {
  std::lock_guard lock(mutex_);
  return iterations_.size();
}

void Session::restore(Iteration it) {
  std::lock_guard lock(mutex_);
  if (it.index != iterations_.size()) {
    throw ParseError("iteration index " + std::to_string(it.index) + " out of sequence");
  }
  iterations_.push_back(std::move(it));
}

void Session::restore(TrainResult result) {
  std::lock_guard lock(mutex_);
  training_.push_back(std::move(result));
}

json Session::header_json() const {
  return {{"type", "session"},
          {"id", id_},
          {"condition", condition_name(options_.condition)},
          {"gamma", options_.gamma},
          {"tie_epsilon", options_.tie_epsilon},
          {"display_count", options_.display_count},
          {"scoring", options_.score_on_display ? "display" : "full"},
          {"seed", options_.seed},
          {"feature_names", options_.feature_names},
          {"created_at", created_at_},
          {"dataset", dataset_to_json(dataset_)}};
}

json Session::summary_json() const {
  json j{{"id", id_},
         {"condition", condition_name(options_.condition)},
         {"gamma", options_.gamma},
         {"tie_epsilon", options_.tie_epsilon},
         {"dim", dataset_.dim()},
         {"feature_names", options_.feature_names},
         {"num_pairs", dataset_.size()},
         {"num_trajectories", dataset_.trajectories().size()},
         {"display_indices", display_},
         {"scoring", options_.score_on_display ? "display" : "full"},
         {"num_scoring_pairs", scoring_.size()},
         {"created_at", created_at_}};
  auto iters = iterations();
  j["iterations"] = iters.size();
  if (!iters.empty()) j["latest"] = iteration_summary_json(iters.back(), options_.condition);
  json trains = json::array();
  for (const auto& t : training_results()) {
    trains.push_back({{"index", t.index},
                      {"machine_generated", true},
                      {"weights", t.weights},
                      {"submitted_at", t.submitted_at},
                      {"summary", t.summary}});
  }
  j["auto_train"] = std::move(trains);
  json warnings = json::array();
  for (const auto& msg : dataset_.transitivity_violations()) {
    warnings.push_back(warning_json({"intransitive_preferences", msg}));
  }
  j["dataset_warnings"] = std::move(warnings);
  return j;
}

json iteration_json(const Iteration& it, Condition condition) {
  json pairs = json::array();
  for (const auto& p : it.per_pair) {
    pairs.push_back({{"record", p.record},
                     {"left", p.left},
                     {"right", p.right},
                     {"left_return", p.left_return},
                     {"right_return", p.right_return},
                     {"expert", label_name(p.expert)},
                     {"induced", label_name(p.induced)},
                     {"agrees", p.agrees}});
  }
  json warnings = json::array();
  for (const auto& w : it.warnings) warnings.push_back(warning_json(w));
  json j{{"index", it.index},
         {"weights", it.weights},
         {"accuracy", it.accuracy},
         {"pairs", std::move(pairs)},
         {"submitted_at", it.submitted_at},
         {"warnings", std::move(warnings)}};
  if (condition == Condition::Alignment && it.tac) j["tac"] = *it.tac;
  return j;
}

json iteration_summary_json(const Iteration& it, Condition condition) {
  json j{{"index", it.index}, {"accuracy", it.accuracy}, {"submitted_at", it.submitted_at}};
  if (condition == Condition::Alignment) j["tac"] = it.tac ? json(*it.tac) : json(nullptr);
  return j;
}

namespace {

Label label_from_name(const std::string& name) {
  if (name == "left") return Label::LeftPreferred;
  if (name == "right") return Label::RightPreferred;
  if (name == "tie") return Label::Tie;
  throw ParseError("unknown label '" + name + "'");
}

}  // namespace

Iteration iteration_from_json(const json& j) {
  Iteration it;
  it.index = j.at("index").get<std::size_t>();
  it.weights = j.at("weights").get<std::vector<double>>();
  it.accuracy = j.at("accuracy").get<double>();
  it.submitted_at = j.at("submitted_at").get<std::string>();
  if (j.contains("tac")) it.tac = j["tac"].get<double>();
  for (const auto& p : j.at("pairs")) {
    PairRow row;
    row.record = p.at("record").get<std::size_t>();
    row.left = p.at("left").get<std::string>();
    row.right = p.at("right").get<std::string>();
    row.left_return = p.at("left_return").get<double>();
    row.right_return = p.at("right_return").get<double>();
    row.expert = label_from_name(p.at("expert").get<std::string>());
    row.induced = label_from_name(p.at("induced").get<std::string>());
    row.agrees = p.at("agrees").get<bool>();
    it.per_pair.push_back(std::move(row));
  }
  for (const auto& w : j.at("warnings")) {
    it.warnings.push_back({w.at("code").get<std::string>(), w.at("message").get<std::string>()});
  }
  return it;
}

// ---------------------------------------------------------------------------
// TuningService
// ---------------------------------------------------------------------------

TuningService::TuningService(std::optional<std::filesystem::path> data_dir)
    : clock(utc_now), data_dir_(std::move(data_dir)) {
  std::random_device rd;
  id_salt_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  if (data_dir_) {
    std::error_code ec;
    std::filesystem::create_directories(*data_dir_, ec);
    if (ec) throw Error("io_error", "cannot create data directory " + data_dir_->string() + ": " + ec.message());
    auto probe = *data_dir_ / ".write-probe";
    {
      std::ofstream out(probe);
      if (!out) throw Error("io_error", "data directory " + data_dir_->string() + " is not writable");
    }
    std::filesystem::remove(probe, ec);
    load_existing();
  }
}

std::string TuningService::new_id() {
  std::lock_guard lock(id_mutex_);
  for (;;) {
    std::uint64_t x = id_salt_ + 0x9e3779b97f4a7c15ULL * ++id_counter_;
    x ^= x >> 31;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 29;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    std::string id = buf;
    std::shared_lock reg(registry_mutex_);
    if (!sessions_.count(id)) return id;
  }
}

void TuningService::persist_new(const std::shared_ptr<Session>& session) {
  if (!data_dir_) return;
  auto path = *data_dir_ / (session->id() + kSessionFileSuffix);
  auto stream = std::make_shared<std::ofstream>(path, std::ios::out | std::ios::trunc);
  if (!*stream) throw Error("io_error", "cannot write " + path.string());
  *stream << session->header_json().dump() << '\n' << std::flush;
  if (!*stream) throw Error("io_error", "cannot write " + path.string());
  session->on_append = [stream, path](const json& rec) {
    *stream << rec.dump() << '\n' << std::flush;
    if (!*stream) throw Error("io_error", "cannot append to " + path.string());
  };
}

void TuningService::load_existing() {
  for (const auto& entry : std::filesystem::directory_iterator(*data_dir_)) {
    const auto name = entry.path().filename().string();
    if (name.size() <= std::string(kSessionFileSuffix).size() ||
        !name.ends_with(kSessionFileSuffix)) {
      continue;
    }
    std::ifstream in(entry.path());
    std::string line;
    std::shared_ptr<Session> session;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::exception&) {
        if (in.peek() == EOF) break;  // torn final line from an interrupted write
        throw ParseError(entry.path().string() + ": malformed record", lineno);
      }
      const auto type = rec.value("type", "");
      if (type == "session") {
        SessionOptions o;
        o.condition = parse_condition(rec.at("condition").get<std::string>());
        o.gamma = rec.at("gamma").get<double>();
        o.tie_epsilon = rec.value("tie_epsilon", 0.0);
        o.display_count = rec.value("display_count", std::size_t{0});
        o.score_on_display = rec.value("scoring", "full") == "display";
        o.seed = rec.value("seed", std::uint64_t{0});
        o.feature_names = rec.value("feature_names", std::vector<std::string>{});
        session = std::make_shared<Session>(rec.at("id").get<std::string>(),
                                            dataset_from_json(rec.at("dataset")), std::move(o),
                                            rec.at("created_at").get<std::string>());
      } else if (!session) {
        throw ParseError(entry.path().string() + ": record before session header", lineno);
      } else if (type == "iteration") {
        session->restore(iteration_from_json(rec));
      } else if (type == "train") {
        TrainResult t;
        t.index = rec.at("index").get<std::size_t>();
        t.summary = rec.at("summary");
        t.weights = rec.at("weights").get<std::vector<double>>();
        t.submitted_at = rec.at("submitted_at").get<std::string>();
        session->restore(std::move(t));
      }
    }
    if (!session) continue;
    auto stream = std::make_shared<std::ofstream>(entry.path(), std::ios::out | std::ios::app);
    auto path = entry.path();
    session->on_append = [stream, path](const json& rec) {
      *stream << rec.dump() << '\n' << std::flush;
      if (!*stream) throw Error("io_error", "cannot append to " + path.string());
    };
    std::unique_lock reg(registry_mutex_);
    sessions_[session->id()] = session;
  }
}

std::shared_ptr<Session> TuningService::find(const std::string& id) const {
  std::shared_lock lock(registry_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
  return it->second;
}

std::size_t TuningService::session_count() const {
  std::shared_lock lock(registry_mutex_);
  return sessions_.size();
}

ApiResponse TuningService::create_session(const json& body) {
  try {
    if (!body.is_object()) throw ValidationError("request body must be a JSON object");
    SessionOptions o;
    o.condition = parse_condition(field_or<std::string>(body, "condition", ""));
    o.tie_epsilon = field_or(body, "tie_epsilon", 0.0);
    o.display_count = field_or(body, "display_count", o.display_count);
    auto scoring = field_or<std::string>(body, "scoring", "full");
    if (scoring != "full" && scoring != "display") {
      throw ValidationError("scoring must be 'full' or 'display'");
    }
    o.score_on_display = scoring == "display";
    o.seed = field_or<std::uint64_t>(body, "seed", 0);
    o.feature_names = field_or(body, "feature_names", std::vector<std::string>{});

    std::optional<PreferenceDataset> data;
    double gamma_default = 1.0;
    if (body.contains("dataset")) {
      try {
        data = dataset_from_json(body["dataset"]);
      } catch (const json::exception& e) {
        throw ParseError(std::string("malformed dataset: ") + e.what());
      }
    } else if (body.contains("preferences_path")) {
      std::optional<std::filesystem::path> traj;
      if (body.contains("trajectories_path")) {
        traj = field_or<std::string>(body, "trajectories_path", "");
      }
      auto loaded = load_dataset(field_or<std::string>(body, "preferences_path", ""), traj);
      data = std::move(loaded.dataset);
      gamma_default = loaded.gamma_default;
    } else {
      throw ValidationError("either 'dataset' or 'preferences_path' is required");
    }
    o.gamma = field_or(body, "gamma", gamma_default);

    auto session = std::make_shared<Session>(new_id(), std::move(*data), std::move(o), clock());
    persist_new(session);
    {
      std::unique_lock lock(registry_mutex_);
      sessions_[session->id()] = session;
    }
    return {201, session->summary_json()};
  } catch (const Error& e) {
    return failure(e);
  }
}

ApiResponse TuningService::get_session(const std::string& id) {
  try {
    return {200, find(id)->summary_json()};
  } catch (const Error& e) {
    return failure(e);
  }
}

ApiResponse TuningService::evaluate(const std::string& id, const json& body) {
  try {
    auto session = find(id);
    if (!body.is_object() || !body.contains("weights")) {
      throw ValidationError("body must be {\"weights\": [numbers]}");
    }
    auto weights = weights_from_json(body["weights"], "weights");
    auto it = session->append_iteration(weights, clock());
    return {200, iteration_json(it, session->condition())};
  } catch (const Error& e) {
    return failure(e);
  }
}

ApiResponse TuningService::history(const std::string& id) {
  try {
    auto session = find(id);
    json list = json::array();
    for (const auto& it : session->iterations()) {
      list.push_back(iteration_summary_json(it, session->condition()));
    }
    return {200, json{{"id", id}, {"iterations", std::move(list)}}};
  } catch (const Error& e) {
    return failure(e);
  }
}

ApiResponse TuningService::auto_train(const std::string& id, const json& body) {
  try {
    auto session = find(id);
    json cfg = body.is_object() && body.contains("config") ? body["config"] : json::object();
    TrainConfig config = config_from_json(cfg, session->options().gamma, session->options().tie_epsilon);
    std::vector<double> lrs;
    std::vector<std::size_t> batches;
    if (cfg.contains("grid")) {
      const auto& g = cfg["grid"];
      if (g.contains("learning_rates")) lrs = weights_from_json(g["learning_rates"], "grid.learning_rates");
      batches = field_or(g, "batch_sizes", std::vector<std::size_t>{});
    }
    auto result = session->append_training(config, lrs, batches, clock());
    json j{{"index", result.index},
           {"machine_generated", true},
           {"weights", result.weights},
           {"submitted_at", result.submitted_at},
           {"summary", result.summary}};
    if (session->condition() == Condition::Control) strip_tac(j);
    return {200, std::move(j)};
  } catch (const Error& e) {
    return failure(e);
  }
}

ApiResponse TuningService::pairs(const std::string& id) {
  try {
    auto session = find(id);
    const auto& data = session->dataset();
    const double gamma = session->options().gamma;
    auto iters = session->iterations();
    std::optional<LinearRewardModel> latest;
    if (!iters.empty()) latest.emplace(iters.back().weights, gamma);

    auto summarize = [&](const Trajectory& t) {
      const std::size_t d = t.dim();
      std::vector<double> sums(d, 0.0), mins(d, INFINITY), maxs(d, -INFINITY);
      for (const auto& s : t.steps()) {
        for (std::size_t k = 0; k < d; ++k) {
          sums[k] += s[k];
          mins[k] = std::min(mins[k], s[k]);
          maxs[k] = std::max(maxs[k], s[k]);
        }
      }
      std::vector<double> means(d);
      for (std::size_t k = 0; k < d; ++k) means[k] = sums[k] / static_cast<double>(t.length());
      json j{{"id", t.id()},
             {"length", t.length()},
             {"feature_sums", sums},
             {"feature_means", means},
             {"feature_min", mins},
             {"feature_max", maxs},
             {"discounted_feature_sums", discounted_feature_sum(t, gamma)},
             {"metadata", t.metadata()}};
      if (latest) {
        // Cumulative discounted return after each step, for a sparkline.
        std::vector<double> spark;
        double acc = 0.0, disc = 1.0;
        for (const auto& s : t.steps()) {
          acc += disc * step_reward(*latest, s);
          disc *= gamma;
          spark.push_back(acc);
        }
        j["return_sparkline"] = std::move(spark);
      }
      return j;
    };

    std::vector<bool> shown(data.size(), false);
    for (auto i : session->display_indices()) shown[i] = true;
    json list = json::array();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& r = data.records()[i];
      list.push_back({{"record", i},
                      {"displayed", static_cast<bool>(shown[i])},
                      {"expert", label_name(r.label)},
                      {"left", summarize(data.trajectory(r.left))},
                      {"right", summarize(data.trajectory(r.right))}});
    }
    return {200, json{{"id", id}, {"pairs", std::move(list)}}};
  } catch (const Error& e) {
    return failure(e);
  }
}

ApiResponse TuningService::handle(const std::string& method, const std::string& path,
                                  const std::string& body) {
  auto parts = split_path(path);
  auto parse_body = [&](json& out) -> std::optional<ApiResponse> {
    if (body.empty()) {
      out = json::object();
      return std::nullopt;
    }
    try {
      out = json::parse(body);
    } catch (const json::exception& e) {
      return ApiResponse{400, error_body("parse_error", "request body is not valid JSON",
                                         {{"reason", e.what()}})};
    }
    return std::nullopt;
  };
  auto not_allowed = [&] {
    return ApiResponse{405, error_body("method_not_allowed", method + " not allowed on " + path)};
  };

  if (parts.empty() || parts[0] != "sessions" || parts.size() > 3) {
    return {404, error_body("not_found", "no route for " + path)};
  }
  json j;
  if (parts.size() == 1) {
    if (method != "POST") return not_allowed();
    if (auto err = parse_body(j)) return *err;
    return create_session(j);
  }
  const std::string& id = parts[1];
  if (parts.size() == 2) {
    if (method != "GET") return not_allowed();
    return get_session(id);
  }
  const std::string& action = parts[2];
  if (action == "evaluate" || action == "train") {
    if (method != "POST") return not_allowed();
    if (auto err = parse_body(j)) return *err;
    return action == "evaluate" ? evaluate(id, j) : auto_train(id, j);
  }
  if (action == "history" || action == "pairs") {
    if (method != "GET") return not_allowed();
    return action == "history" ? history(id) : pairs(id);
  }
  return {404, error_body("not_found", "no route for " + path)};
}

void register_routes(httplib::Server& server, TuningService& service) {
  auto dispatch = [&service](const httplib::Request& req, httplib::Response& res) {
    ApiResponse r;
    try {
      r = service.handle(req.method, req.path, req.body);
    } catch (const std::exception& e) {
      r = {500, error_body("internal_error", e.what())};
    }
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  const char* pattern = R"(/.*)";
  server.Get(pattern, dispatch);
  server.Post(pattern, dispatch);
  server.Put(pattern, dispatch);
  server.Delete(pattern, dispatch);
  server.Patch(pattern, dispatch);
}

}  // namespace prefalign::service
