#include "doctest.h"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int status = -1;
  std::string out;
};

// Runs the CLI with stdout captured and stderr discarded.
Result run(const std::string& args) {
  const std::string cmd = std::string("\"") + PREFALIGN_CLI + "\" " + args + " 2>/dev/null";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int raw = ::pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string toy(const char* name) { return std::string(PREFALIGN_SOURCE_DIR) + "/data/toy/" + name; }

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("prefalign-cli-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("tac on the toy fixtures") {
  auto clean = run("tac --prefs " + toy("toy-clean.prefs.jsonl") + " --weights 1");
  CHECK(clean.status == 0);
  CHECK(clean.out.find("tac=1.000000") != std::string::npos);
  auto noisy = run("tac --prefs " + toy("toy-noisy.prefs.jsonl") + " --weights 1");
  CHECK(noisy.status == 0);
  CHECK(noisy.out.find("tac=0.600000 P=4 Q=1") != std::string::npos);
  auto j = run("tac --prefs " + toy("toy-noisy.prefs.jsonl") + " --weights 1 --format json");
  REQUIRE(j.status == 0);
  const auto parsed = nlohmann::json::parse(j.out);
  CHECK(parsed["tac"].get<double>() == doctest::Approx(0.6));
}

TEST_CASE("tac exit codes") {
  CHECK(run("tac --prefs /no/such.prefs.jsonl --weights 1").status == 2);
  CHECK(run("tac --prefs " + toy("toy-noisy.prefs.jsonl") + " --weights 1,2").status == 2);
  CHECK(run("tac --prefs " + toy("toy-noisy.prefs.jsonl") + " --weights 0").status == 3);
  CHECK(run("tac --weights 1").status == 2);
  CHECK(run("frobnicate").status == 2);
}

TEST_CASE("train on the noisy toy") {
  const auto dir = scratch_dir("train");
  const std::string base = "train --prefs " + toy("toy-noisy.prefs.jsonl") +
                           " --loss soft-tac --optimizer sgd --lr 0.1 --batch 1 --epochs 40 --patience 40 --init 0";
  REQUIRE(run(base + " --out " + (dir / "a").string()).status == 0);
  const auto w = nlohmann::json::parse(slurp(dir / "a" / "weights.json"));
  CHECK(w["weights"][0].get<double>() == doctest::Approx(2.3733885634212712));
  CHECK(fs::exists(dir / "a" / "trace.tsv"));

  REQUIRE(run(base + " --out " + (dir / "b").string()).status == 0);
  CHECK(slurp(dir / "a" / "weights.json") == slurp(dir / "b" / "weights.json"));
  CHECK(slurp(dir / "a" / "trace.tsv") == slurp(dir / "b" / "trace.tsv"));

  REQUIRE(run("train --prefs " + toy("toy-noisy.prefs.jsonl") + " --protocol-lrs --epochs 5 --out " +
              (dir / "grid").string())
              .status == 0);
  std::istringstream grid(slurp(dir / "grid" / "grid.tsv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(grid, line)) ++rows;
  CHECK(rows == 7);  // header plus six learning rates

  CHECK(run("train --prefs " + toy("toy-noisy.prefs.jsonl") + " --lr -1 --out " + (dir / "c").string()).status == 2);
  fs::remove_all(dir);
}

TEST_CASE("reproduce") {
  auto r = run("reproduce toy-clean");
  CHECK(r.status == 0);
  CHECK(r.out.find("toy-clean PASS") != std::string::npos);
  CHECK(run("reproduce no-such-study").status == 2);
}

TEST_CASE("serve fails cleanly on unusable resources") {
  const auto dir = scratch_dir("serve");
  fs::create_directories(dir);
  std::ofstream(dir / "file") << "x";
  CHECK(run("serve --data-dir " + (dir / "file" / "sub").string() + " --bind 127.0.0.1:0").status == 4);

  // Hold a port with a listening socket so the CLI cannot bind it.
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  REQUIRE(::listen(fd, 1) == 0);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  CHECK(run("serve --memory --bind 127.0.0.1:" + std::to_string(ntohs(addr.sin_port))).status == 4);
  ::close(fd);
  fs::remove_all(dir);
}

}  // TEST_SUITE
