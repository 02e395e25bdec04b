#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "prefalign/alignment.hpp"
#include "prefalign/reward_core.hpp"
#include "prefalign/trainer.hpp"

namespace httplib {
class Server;
}

namespace prefalign::service {

using nlohmann::json;

// Control sessions never see a TAC value; Alignment sessions get it with
// every evaluation.
enum class Condition { Control, Alignment };
const char* condition_name(Condition c) noexcept;
Condition parse_condition(const std::string& name);

struct PairRow {
  std::size_t record = 0;  // index into the dataset records
  std::string left;
  std::string right;
  double left_return = 0.0;
  double right_return = 0.0;
  Label expert = Label::Tie;
  Label induced = Label::Tie;
  bool agrees = false;
};

struct Warning {
  std::string code;
  std::string message;
};

struct Iteration {
  std::size_t index = 0;
  std::vector<double> weights;
  std::vector<PairRow> per_pair;
  std::optional<double> tac;
  double accuracy = 0.0;
  std::string submitted_at;
  std::vector<Warning> warnings;
};

struct TrainResult {
  std::size_t index = 0;
  json summary;  // already condition-filtered
  std::vector<double> weights;
  std::string submitted_at;
};

struct SessionOptions {
  Condition condition = Condition::Alignment;
  double gamma = 1.0;
  double tie_epsilon = 0.0;
  std::size_t display_count = 15;
  bool score_on_display = false;  // default: score on the full dataset
  std::uint64_t seed = 0;         // display subset selection
  std::vector<std::string> feature_names;
};

class Session {
 public:
  Session(std::string id, PreferenceDataset dataset, SessionOptions options,
          std::string created_at);

  const std::string& id() const noexcept { return id_; }
  const PreferenceDataset& dataset() const noexcept { return dataset_; }
  const SessionOptions& options() const noexcept { return options_; }
  Condition condition() const noexcept { return options_.condition; }
  const std::string& created_at() const noexcept { return created_at_; }
  const std::vector<std::size_t>& display_indices() const noexcept { return display_; }
  const std::vector<std::size_t>& scoring_indices() const noexcept { return scoring_; }

  // Pure metrics for `weights` (no index or timestamp assigned).
  Iteration score(const std::vector<double>& weights) const;

  // Mutations below are serialized by the session's own mutex.
  Iteration append_iteration(const std::vector<double>& weights, const std::string& now);
  TrainResult append_training(const TrainConfig& config,
                              const std::vector<double>& grid_learning_rates,
                              const std::vector<std::size_t>& grid_batch_sizes,
                              const std::string& now);
  std::vector<Iteration> iterations() const;
  std::vector<TrainResult> training_results() const;
  std::size_t iteration_count() const;

  // Restores persisted records.
  void restore(Iteration it);
  void restore(TrainResult result);

  json header_json() const;
  json summary_json() const;

  // Invoked (under the session lock) after every append; used for persistence.
  std::function<void(const json&)> on_append;

 private:
  std::string id_;
  PreferenceDataset dataset_;
  SessionOptions options_;
  std::string created_at_;
  std::vector<std::size_t> display_;
  std::vector<std::size_t> scoring_;
  PreferenceDataset scoring_data_;
  mutable std::mutex mutex_;
  std::vector<Iteration> iterations_;
  std::vector<TrainResult> training_;
};

json iteration_json(const Iteration& it, Condition condition);
json iteration_summary_json(const Iteration& it, Condition condition);
Iteration iteration_from_json(const json& j);

struct ApiResponse {
  int status = 200;
  json body;
};

// Session registry plus request handling. With a data directory every
// session is an append-only JSON-lines file <dir>/<id>.session.jsonl that is
// flushed after each record; without one, state lives in memory only.
class TuningService {
 public:
  explicit TuningService(std::optional<std::filesystem::path> data_dir = std::nullopt);

  // Routes a request; `path` excludes the query string.
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body);

  ApiResponse create_session(const json& body);
  ApiResponse get_session(const std::string& id);
  ApiResponse evaluate(const std::string& id, const json& body);
  ApiResponse history(const std::string& id);
  ApiResponse auto_train(const std::string& id, const json& body);
  ApiResponse pairs(const std::string& id);

  std::size_t session_count() const;

  // Clock override for tests; returns ISO-8601 UTC strings.
  std::function<std::string()> clock;

 private:
  std::shared_ptr<Session> find(const std::string& id) const;
  std::string new_id();
  void persist_new(const std::shared_ptr<Session>& session);
  void load_existing();

  std::optional<std::filesystem::path> data_dir_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex id_mutex_;
  std::uint64_t id_counter_ = 0;
  std::uint64_t id_salt_ = 0;
};

std::string utc_now();
json error_body(const std::string& code, const std::string& message, json detail = json::object());

// Attaches every route to `server`.
void register_routes(httplib::Server& server, TuningService& service);

}  // namespace prefalign::service
