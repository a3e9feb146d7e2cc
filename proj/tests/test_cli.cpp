#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "rtlab/trajdata.hpp"
#include "rtlab/util.hpp"

using namespace rtlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "rtlab_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string path_in(const std::string& name) { return (scratch_root() / name).string(); }

int run_cli(const std::vector<std::string>& argv, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int rc = cli::run(argv, out, err);
  if (err_text != nullptr) *err_text = err.str();
  return rc;
}

// A shared tiny BoxBall pipeline; built once, inspected by several cases.
const std::string& chain_data() {
  static const std::string dir = [] {
    const std::string d = path_in("chain_data");
    REQUIRE(run_cli({"collect", "--env", "boxball", "--quality", "medium", "--n", "30",
                     "--seed", "5", "--out", d}) == 0);
    return d;
  }();
  return dir;
}

const std::string& chain_model() {
  static const std::string dir = [] {
    const std::string d = path_in("chain_model");
    REQUIRE(run_cli({"train-rt", "--data", chain_data(), "--epochs", "2", "--seed", "1",
                     "--out", d}) == 0);
    return d;
  }();
  return dir;
}

const std::string& chain_vae() {
  static const std::string dir = [] {
    const std::string d = path_in("chain_vae");
    REQUIRE(run_cli({"train-vae", "--data", chain_data(), "--epochs", "3", "--seed", "2",
                     "--out", d}) == 0);
    return d;
  }();
  return dir;
}

const std::string& chain_aug() {
  static const std::string dir = [] {
    const std::string d = path_in("chain_aug");
    REQUIRE(run_cli({"augment", "--data", chain_data(), "--model", chain_model(), "--vae",
                     chain_vae(), "--generations", "8", "--max-steps", "6", "--seed", "3",
                     "--out", d}) == 0);
    return d;
  }();
  return dir;
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("usage and config errors exit with code 1") {
  std::string err;
  CHECK(run_cli({}, &err) == 1);
  CHECK(run_cli({"frobnicate", "--seed", "1", "--out", path_in("x")}, &err) == 1);
  CHECK(err.find("unknown command") != std::string::npos);
  CHECK(run_cli({"collect", "boxball"}, &err) == 1);
  CHECK(run_cli({"collect", "--env"}, &err) == 1);
  CHECK(err.find("missing its value") != std::string::npos);
  CHECK(run_cli({"collect", "--env", "boxball", "--out", path_in("x")}, &err) == 1);
  CHECK(err.find("--seed") != std::string::npos);
  CHECK(run_cli({"collect", "--env", "boxball", "--seed", "1"}, &err) == 1);
  CHECK(err.find("--out") != std::string::npos);
  CHECK(run_cli({"collect", "--env", "boxball", "--seed", "1", "--bogus", "2", "--out",
                 path_in("x")},
                &err) == 1);
  CHECK(err.find("--bogus") != std::string::npos);
  CHECK(run_cli({"collect", "--env", "marsrover", "--seed", "1", "--out", path_in("x")},
                &err) == 1);
  CHECK(err.find("marsrover") != std::string::npos);
  CHECK(run_cli({"collect", "--env", "boxball", "--n", "0", "--seed", "1", "--out",
                 path_in("x")},
                &err) == 1);
  CHECK(run_cli({"collect", "--env", "boxball", "--config", path_in("absent.cfg"), "--seed",
                 "1", "--out", path_in("x")},
                &err) == 1);
  CHECK(err.find("absent.cfg") != std::string::npos);
}

TEST_CASE("missing inputs are reported as config errors naming the path") {
  std::string err;
  CHECK(run_cli({"train-rt", "--data", path_in("no_such_dir"), "--seed", "1", "--out",
                 path_in("x")},
                &err) == 1);
  CHECK(err.find("no_such_dir") != std::string::npos);

  // A manifest without the checkpoint beside it pinpoints the missing file.
  const std::string hollow = path_in("hollow_model");
  fs::create_directories(hollow);
  util::write_file(hollow + "/manifest.txt", "command=train-rt\n");
  CHECK(run_cli({"augment", "--data", chain_data(), "--model", hollow, "--vae", hollow,
                 "--seed", "1", "--out", path_in("x")},
                &err) == 1);
  CHECK(err.find(hollow + "/model.ckpt") != std::string::npos);
}

TEST_CASE("collect is seed-deterministic") {
  const std::string a = path_in("det_a");
  const std::string b = path_in("det_b");
  const std::string c = path_in("det_c");
  REQUIRE(run_cli({"collect", "--env", "boxball", "--quality", "medium", "--n", "20",
                   "--seed", "42", "--out", a}) == 0);
  REQUIRE(run_cli({"collect", "--env", "boxball", "--quality", "medium", "--n", "20",
                   "--seed", "42", "--out", b}) == 0);
  REQUIRE(run_cli({"collect", "--env", "boxball", "--quality", "medium", "--n", "20",
                   "--seed", "123", "--out", c}) == 0);
  CHECK(util::read_file(a + "/dataset.txt") == util::read_file(b + "/dataset.txt"));
  CHECK(util::read_file(a + "/manifest.txt") == util::read_file(b + "/manifest.txt"));
  CHECK(util::read_file(a + "/dataset.txt") != util::read_file(c + "/dataset.txt"));
}

TEST_CASE("training commands produce byte-identical reruns") {
  const std::string again = path_in("chain_model_again");
  REQUIRE(run_cli({"train-rt", "--data", chain_data(), "--epochs", "2", "--seed", "1",
                   "--out", again}) == 0);
  CHECK(util::read_file(chain_model() + "/model.ckpt") ==
        util::read_file(again + "/model.ckpt"));
  CHECK(util::read_file(chain_model() + "/loss.csv") == util::read_file(again + "/loss.csv"));
}

TEST_CASE("augment emits the analysis table and a dataset-shaped directory") {
  const std::string dir = chain_aug();
  util::KeyValue m = util::KeyValue::load(dir + "/manifest.txt");

  // Resolved configuration is echoed alongside run statistics.
  CHECK(m.get("command") == "augment");
  CHECK(m.get("env") == "boxball");
  CHECK(m.get_int("seed") == 3);
  CHECK(m.get_int("generations") == 8);
  CHECK(m.get_int("max_steps") == 6);
  CHECK(m.get("gamma_mode") == "weighted");
  CHECK(m.get_double("beta") == 0.5);
  CHECK(m.has("kept"));
  CHECK(m.has("impossible_rate"));

  const std::string analysis = util::read_file(dir + "/analysis.csv");
  CHECK(analysis.rfind("generation,splice_index,generated_length,truncated,gamma_stop,"
                       "impossible\n",
                       0) == 0);
  CHECK(line_count(analysis) == 1 + 8);

  const std::string records = util::read_file(dir + "/records.csv");
  CHECK(line_count(records) == 1 + 8);

  // The output directory doubles as a dataset directory: combined data plus
  // the vocabulary it was generated under.
  CHECK(util::read_file(dir + "/vocab.txt") == util::read_file(chain_data() + "/vocab.txt"));
  auto combined = trajdata::load_dataset(dir + "/dataset.txt");
  auto generated = trajdata::load_dataset(dir + "/generated.txt");
  CHECK(combined.size() == 30 + generated.size());
  CHECK(generated.size() == static_cast<std::size_t>(m.get_int("kept")));
  for (const auto& t : generated) CHECK(t.provenance == trajdata::Provenance::generated);
}

TEST_CASE("augment refuses a model trained under a different vocabulary") {
  const std::string other = path_in("other_data");
  REQUIRE(run_cli({"collect", "--env", "boxball", "--quality", "medium", "--n", "30",
                   "--seed", "5", "--rtg-bins", "16", "--out", other}) == 0);
  std::string err;
  CHECK(run_cli({"augment", "--data", other, "--model", chain_model(), "--vae", chain_vae(),
                 "--generations", "2", "--seed", "3", "--out", path_in("x")},
                &err) == 1);
  CHECK(err.find("vocabulary") != std::string::npos);
}

TEST_CASE("policy training and evaluation append to a cumulative results file") {
  const std::string pol = path_in("chain_bc");
  REQUIRE(run_cli({"train-policy", "--data", chain_data(), "--learner", "bc", "--epochs",
                   "3", "--seed", "9", "--out", pol}) == 0);
  util::KeyValue pm = util::KeyValue::load(pol + "/manifest.txt");
  CHECK(pm.get("learner") == "bc");
  CHECK(pm.get("env") == "boxball");
  CHECK(pm.has("checkpoint_digest"));

  const std::string results = path_in("results.csv");
  const std::vector<std::string> eval = {
      "evaluate", "--policy", pol,       "--episodes", "10",     "--seed", "77",
      "--run-id", "bc-raw-s9", "--dataset-id", "raw", "--results", results,
      "--out",    path_in("chain_bc_eval")};
  REQUIRE(run_cli(eval) == 0);
  const std::string once = util::read_file(results);
  CHECK(once.rfind("run_id,dataset_id,learner,seed,mean_return,success_rate,mean_length\n",
                   0) == 0);
  CHECK(line_count(once) == 2);
  CHECK(once.find("bc-raw-s9,raw,bc,77,") != std::string::npos);

  // Same invocation again: the header stays single, the identical row appends.
  REQUIRE(run_cli(eval) == 0);
  const std::string twice = util::read_file(results);
  CHECK(line_count(twice) == 3);
  CHECK(twice.rfind("run_id") == 0);
  std::istringstream rows(twice);
  std::string header, r1, r2;
  std::getline(rows, header);
  std::getline(rows, r1);
  std::getline(rows, r2);
  CHECK(r1 == r2);
}

TEST_CASE("bcq training resolves its own flag set") {
  const std::string pol = path_in("chain_bcq");
  REQUIRE(run_cli({"train-policy", "--data", chain_data(), "--learner", "bcq", "--steps",
                   "150", "--filter-tau", "0.25", "--seed", "4", "--out", pol}) == 0);
  util::KeyValue pm = util::KeyValue::load(pol + "/manifest.txt");
  CHECK(pm.get("learner") == "bcq");
  CHECK(pm.get_int("steps") == 150);
  CHECK(pm.get_double("filter_tau") == 0.25);
  CHECK(run_cli({"evaluate", "--policy", pol, "--episodes", "5", "--seed", "8", "--out",
                 path_in("chain_bcq_eval")}) == 0);
}

TEST_CASE("render writes a summary plus capped per-trajectory files") {
  const std::string dir = path_in("chain_render");
  REQUIRE(run_cli({"render", "--data", chain_aug(), "--file", "generated.txt", "--limit",
                   "3", "--seed", "0", "--out", dir}) == 0);
  CHECK(fs::exists(dir + "/summary.svg"));
  CHECK(fs::exists(dir + "/traj_0000.svg"));
  CHECK(fs::exists(dir + "/traj_0002.svg"));
  CHECK(!fs::exists(dir + "/traj_0003.svg"));
  const std::string svg = util::read_file(dir + "/summary.svg");
  CHECK(svg.find("<svg") != std::string::npos);
}

TEST_CASE("config file values load and explicit flags override them") {
  const std::string cfg = path_in("collect.cfg");
  util::write_file(cfg, "quality=expert\nn=25\n");
  const std::string dir = path_in("cfg_out");
  REQUIRE(run_cli({"collect", "--env", "boxball", "--config", cfg, "--n", "15", "--seed",
                   "5", "--out", dir}) == 0);
  util::KeyValue m = util::KeyValue::load(dir + "/manifest.txt");
  CHECK(m.get("quality") == "expert");  // from the file
  CHECK(m.get_int("n") == 15);          // flag wins
  CHECK(m.get_int("trajectories") == 15);
}
