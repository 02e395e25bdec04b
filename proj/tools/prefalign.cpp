// prefalign: command-line front end.
//
// Exit codes: 0 ok, 1 a reproduced criterion failed, 2 bad input, 3
// degenerate data (TAC undefined), 4 environment (port in use, unwritable
// directory).

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "prefalign/alignment.hpp"
#include "prefalign/datalab.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/service.hpp"
#include "prefalign/studies.hpp"
#include "prefalign/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prefalign;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCriterion = 1;
constexpr int kExitInput = 2;
constexpr int kExitDegenerate = 3;
constexpr int kExitEnvironment = 4;

int exit_code_for(const Error& e) {
  if (e.code() == "degenerate_dataset") return kExitDegenerate;
  if (e.code() == "io_error") return kExitEnvironment;
  return kExitInput;
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw Error("io_error", "cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("io_error", "cannot create " + dir.string() + ": " + ec.message());
}

struct DataArgs {
  std::string preferences;
  std::string trajectories;
  std::optional<double> gamma;
  double tie_epsilon = 0.0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--prefs", preferences, "preference file (.prefs.jsonl)")->required();
    cmd->add_option("--traj", trajectories, "trajectory file; overrides the preference header");
    cmd->add_option("--gamma", gamma, "discount; defaults to the trajectory file's gamma_default");
    cmd->add_option("--tie-epsilon", tie_epsilon, "induced tie threshold on |dG|")->check(CLI::NonNegativeNumber);
  }

  LoadedDataset load() const {
    std::optional<fs::path> traj;
    if (!trajectories.empty()) traj = trajectories;
    auto loaded = load_dataset(preferences, traj);
    if (gamma) loaded.gamma_default = *gamma;
    return loaded;
  }
};

// ---------------------------------------------------------------------------
// tac
// ---------------------------------------------------------------------------

struct TacArgs {
  DataArgs data;
  std::vector<double> weights;
  bool per_pair = false;
  std::string format = "text";
};

int cmd_tac(const TacArgs& a) {
  const auto loaded = a.data.load();
  const LinearRewardModel model(a.weights, loaded.gamma_default);
  require_same_dim(loaded.dataset.dim(), model.dim(), "weights");
  const auto report = tac(loaded.dataset, model, a.data.tie_epsilon);
  const double acc = accuracy(loaded.dataset, model, a.data.tie_epsilon);
  const auto& c = report.counts;
  if (a.format == "json") {
    json j{{"format", "prefalign.tac"},
           {"version", 1},
           {"tac", report.tac},
           {"accuracy", acc},
           {"gamma", model.gamma()},
           {"weights", a.weights},
           {"counts",
            {{"P", c.concordant},
             {"Q", c.discordant},
             {"X0", c.tied_only_induced},
             {"Y0", c.tied_only_human},
             {"tied_both", c.tied_both}}}};
    if (a.per_pair) {
      json rows = json::array();
      for (const auto& d : report.per_pair) {
        json r = record_to_json(d.record);
        r["delta_return"] = d.induced.delta_return;
        r["induced"] = to_int(d.induced.verdict);
        r["class"] = pair_class_name(d.classification);
        rows.push_back(std::move(r));
      }
      j["per_pair"] = std::move(rows);
    }
    std::cout << j.dump(2) << '\n';
    return kExitOk;
  }
  std::printf("tac=%.6f P=%zu Q=%zu X0=%zu Y0=%zu tied_both=%zu accuracy=%.6f\n", report.tac,
              c.concordant, c.discordant, c.tied_only_induced, c.tied_only_human, c.tied_both, acc);
  if (a.per_pair) {
    std::printf("left\tright\thuman\tinduced\tdelta_return\tclass\n");
    for (const auto& d : report.per_pair) {
      std::printf("%s\t%s\t%s\t%s\t%.9g\t%s\n", d.record.left.c_str(), d.record.right.c_str(),
                  label_name(d.record.label), label_name(d.induced.verdict), d.induced.delta_return,
                  pair_class_name(d.classification));
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  DataArgs data;
  std::string loss = "soft-tac";
  std::string optimizer = "adam";
  double lr = 0.01;
  std::vector<double> grid_lr;
  bool protocol_lrs = false;
  std::size_t batch = 8;
  std::vector<std::size_t> grid_batch;
  std::size_t epochs = 500;
  std::size_t patience = 50;
  double alpha = 1.0;
  double loss_delta = 1e-4;
  std::uint64_t seed = 0;
  std::vector<double> init;
  std::optional<double> clip_low;
  std::optional<double> clip_high;
  double validation_fraction = 0.0;
  std::string out;
};

std::string tac_cell(const std::optional<double>& t) { return t ? fmt("%.9g", *t) : "nan"; }

std::string weights_cell(const std::vector<double>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + fmt("%.17g", w[i]);
  return s;
}

std::string trace_tsv(const TrainRun& run) {
  std::ostringstream out;
  out << "epoch\ttac\taccuracy\tloss\tweights\n";
  auto row = [&](const EpochMetrics& m) {
    out << m.epoch << '\t' << tac_cell(m.tac) << '\t' << fmt("%.9g", m.accuracy) << '\t'
        << fmt("%.9g", m.loss) << '\t' << weights_cell(m.weights) << '\n';
  };
  row(run.initial);
  for (const auto& m : run.epoch_trace) row(m);
  return out.str();
}

int cmd_train(const TrainArgs& a) {
  const auto loaded = a.data.load();
  TrainConfig c;
  c.loss = parse_loss_kind(a.loss);
  c.optimizer = parse_optimizer_kind(a.optimizer);
  c.alpha = a.alpha;
  c.learning_rate = a.lr;
  c.batch_size = a.batch;
  c.max_epochs = a.epochs;
  c.patience = a.patience;
  c.loss_delta = a.loss_delta;
  c.clip_low = a.clip_low;
  c.clip_high = a.clip_high;
  c.seed = a.seed;
  c.gamma = loaded.gamma_default;
  c.tie_epsilon = a.data.tie_epsilon;
  c.validation_fraction = a.validation_fraction;
  if (!a.init.empty()) c.initial_weights = a.init;
  c.validate();

  std::vector<double> lrs = a.grid_lr;
  if (a.protocol_lrs) lrs.assign(std::begin(kProtocolLearningRates), std::end(kProtocolLearningRates));
  std::vector<std::size_t> batches = a.grid_batch;
  const bool grid = !lrs.empty() || !batches.empty();

  const fs::path out(a.out);
  ensure_dir(out);
  TrainRun run;
  if (grid) {
    if (lrs.empty()) lrs.push_back(a.lr);
    if (batches.empty()) batches.push_back(a.batch);
    const GridResult result = grid_search(loaded.dataset, lrs, batches, c);
    std::ostringstream g;
    g << "learning_rate\tbatch_size\tstatus\tbest_epoch\ttac\taccuracy\tloss\tchosen\n";
    for (std::size_t i = 0; i < result.cells.size(); ++i) {
      const auto& cell = result.cells[i];
      g << fmt("%.9g", cell.learning_rate) << '\t' << cell.batch_size << '\t';
      if (cell.run) {
        const auto& b = cell.run->best;
        g << "ok\t" << b.epoch << '\t' << tac_cell(b.tac) << '\t' << fmt("%.9g", b.accuracy) << '\t'
          << fmt("%.9g", b.loss);
      } else {
        g << "failed\t\t\t\t";
        std::cerr << "grid cell lr=" << cell.learning_rate << " batch=" << cell.batch_size
                  << " failed: " << cell.error << '\n';
      }
      g << '\t' << (i == result.best_index ? "yes" : "no") << '\n';
    }
    write_file(out / "grid.tsv", g.str());
    run = result.best();
  } else {
    run = train(loaded.dataset, c);
  }

  json w{{"format", "prefalign.weights"},
         {"version", 1},
         {"weights", run.final_weights},
         {"gamma", c.gamma},
         {"loss", loss_name(run.config.loss)},
         {"optimizer", optimizer_name(run.config.optimizer)},
         {"learning_rate", run.config.learning_rate},
         {"batch_size", run.config.batch_size},
         {"alpha", run.config.alpha},
         {"seed", run.config.seed},
         {"best_epoch", run.best.epoch},
         {"stopped_at_epoch", run.stopped_at_epoch},
         {"stop_reason", stop_reason_name(run.stop_reason)},
         {"accuracy", run.best.accuracy},
         {"loss_value", run.best.loss},
         {"tac", run.best.tac ? json(*run.best.tac) : json(nullptr)}};
  write_file(out / "weights.json", w.dump(2) + "\n");
  write_file(out / "trace.tsv", trace_tsv(run));

  std::printf("weights=%s best_epoch=%zu stopped_at=%zu tac=%s accuracy=%.6f loss=%.6f\n",
              weights_cell(run.final_weights).c_str(), run.best.epoch, run.stopped_at_epoch,
              tac_cell(run.best.tac).c_str(), run.best.accuracy, run.best.loss);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// reproduce
// ---------------------------------------------------------------------------

int cmd_reproduce(const std::string& name, const std::string& out_dir) {
  const auto report = studies::run_study(name);
  for (const auto& c : report.checks) {
    std::printf("%s  %s: expected %s, observed %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                c.expected.c_str(), c.observed.c_str());
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    for (const auto& t : report.tables) write_file(fs::path(out_dir) / (t.name + ".tsv"), t.tsv);
  } else {
    for (const auto& t : report.tables) std::printf("\n# %s\n%s", t.name.c_str(), t.tsv.c_str());
  }
  std::printf("%s %s (%.2fs)\n", report.name.c_str(), report.passed() ? "PASS" : "FAIL", report.seconds);
  return report.passed() ? kExitOk : kExitCriterion;
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

int cmd_serve(const std::string& data_dir, bool in_memory, const std::string& bind) {
  auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw ValidationError("--bind must be host:port");
  const std::string host = bind.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(bind.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("bad port in --bind '" + bind + "'");
  }

  // Block the shutdown signals before any thread starts; a dedicated thread
  // receives them and stops the server.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  std::optional<fs::path> dir;
  if (!in_memory) dir = fs::path(data_dir);
  service::TuningService svc(dir);

  httplib::Server server;
  service::register_routes(server, svc);
  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
    if (bound < 0) throw Error("io_error", "cannot bind " + host);
  } else if (!server.bind_to_port(host, port)) {
    throw Error("io_error", "cannot bind " + bind + " (port in use?)");
  }
  std::printf("listening on %s:%d (%s)\n", host.c_str(), bound,
              dir ? dir->string().c_str() : "in-memory");
  std::fflush(stdout);

  std::atomic<bool> signalled{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    signalled = true;
    server.stop();
  });
  server.listen_after_bind();
  // listen returned: either a signal arrived or the server failed. Make sure
  // the waiter exits in both cases.
  if (!signalled) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  std::printf("stopped\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string kind;
  std::string out = ".";
  std::string stem;
  std::size_t dim = 2;
  std::size_t trajectories = 40;
  std::size_t preferences = 50;
  std::size_t min_steps = 1;
  std::size_t max_steps = 10;
  double gamma = 1.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> weights;
};

int cmd_generate(const GenerateArgs& a) {
  ensure_dir(a.out);
  PreferenceDataset data = toy_fixture(false);
  std::string stem = a.stem;
  if (a.kind == "toy-noisy" || a.kind == "toy-clean") {
    data = toy_fixture(a.kind == "toy-noisy");
    if (stem.empty()) stem = a.kind;
  } else if (a.kind == "synthetic") {
    SyntheticSpec s;
    s.dim = a.dim;
    s.num_trajectories = a.trajectories;
    s.num_preferences = a.preferences;
    s.min_steps = a.min_steps;
    s.max_steps = a.max_steps;
    s.gamma = a.gamma;
    s.seed = a.seed;
    s.true_weights = a.weights.empty() ? init_weights(a.dim, a.seed + 1000) : a.weights;
    data = generate_synthetic(s);
    if (a.noise > 0.0) data = corrupt_labels(data, NoiseSpec::uniform(a.noise, a.seed + 1)).dataset;
    if (stem.empty()) stem = "synthetic";
  } else {
    throw ValidationError("unknown kind '" + a.kind + "' (valid: toy-noisy, toy-clean, synthetic)");
  }
  auto path = save_dataset(a.out, stem, data, a.gamma);
  std::printf("%s\n", path.string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory alignment toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "prefalign 1.0");

  TacArgs tac_args;
  auto* tac_cmd = app.add_subcommand("tac", "score weights against human preferences");
  tac_args.data.add_to(tac_cmd);
  tac_cmd->add_option("--weights", tac_args.weights, "comma-separated weights (use --weights=-1,2 for a leading minus)")
      ->required()
      ->delimiter(',');
  tac_cmd->add_flag("--per-pair", tac_args.per_pair, "print one row per preference");
  tac_cmd->add_option("--format", tac_args.format)->check(CLI::IsMember({"text", "json"}));

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "learn reward weights from preferences");
  tr.data.add_to(train_cmd);
  train_cmd->add_option("--loss", tr.loss)->check(CLI::IsMember({"soft-tac", "cross-entropy"}));
  train_cmd->add_option("--optimizer", tr.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--grid-lr", tr.grid_lr, "learning rates to sweep")->delimiter(',');
  train_cmd->add_flag("--protocol-lrs", tr.protocol_lrs, "sweep the six reference learning rates");
  train_cmd->add_option("--batch", tr.batch);
  train_cmd->add_option("--grid-batch", tr.grid_batch, "batch sizes to sweep")->delimiter(',');
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--patience", tr.patience);
  train_cmd->add_option("--alpha", tr.alpha);
  train_cmd->add_option("--loss-delta", tr.loss_delta);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--init", tr.init, "initial weights instead of the seeded N(0,1) draw")->delimiter(',');
  train_cmd->add_option("--clip-low", tr.clip_low);
  train_cmd->add_option("--clip-high", tr.clip_high);
  train_cmd->add_option("--validation-fraction", tr.validation_fraction);
  train_cmd->add_option("--out", tr.out, "output directory")->required();

  std::string study, study_out;
  auto* repro_cmd = app.add_subcommand("reproduce", "run a bundled experiment and check its thresholds");
  repro_cmd->add_option("study", study)->required();
  repro_cmd->add_option("--out", study_out, "write tables here instead of stdout");

  std::string data_dir = "sessions", bind = "127.0.0.1:8080";
  bool in_memory = false;
  auto* serve_cmd = app.add_subcommand("serve", "run the tuning service");
  serve_cmd->add_option("--data-dir", data_dir);
  serve_cmd->add_flag("--memory", in_memory, "keep sessions in memory only");
  serve_cmd->add_option("--bind", bind, "host:port (port 0 picks a free port)");

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "write a dataset (toy-noisy, toy-clean, synthetic)");
  gen_cmd->add_option("kind", gen.kind)->required();
  gen_cmd->add_option("--out", gen.out);
  gen_cmd->add_option("--stem", gen.stem);
  gen_cmd->add_option("--dim", gen.dim);
  gen_cmd->add_option("--trajectories", gen.trajectories);
  gen_cmd->add_option("--preferences", gen.preferences);
  gen_cmd->add_option("--min-steps", gen.min_steps);
  gen_cmd->add_option("--max-steps", gen.max_steps);
  gen_cmd->add_option("--gamma", gen.gamma);
  gen_cmd->add_option("--noise", gen.noise);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--weights", gen.weights)->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*tac_cmd) return cmd_tac(tac_args);
    if (*train_cmd) return cmd_train(tr);
    if (*repro_cmd) return cmd_reproduce(study, study_out);
    if (*serve_cmd) return cmd_serve(data_dir, in_memory, bind);
    if (*gen_cmd) return cmd_generate(gen);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what();
    if (e.line() > 0) std::cerr << " (line " << e.line() << ")";
    std::cerr << '\n';
    return kExitInput;
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
