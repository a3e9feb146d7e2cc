#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "rtlab/checkpoint.hpp"
#include "rtlab/grad_check.hpp"
#include "rtlab/grid_env.hpp"
#include "rtlab/reliability.hpp"
#include "rtlab/rng.hpp"

using namespace rtlab;
using namespace rtlab::reliability;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("reliability_test_") + name;
}

envs::Transition make_transition(int s, int a, int s_next) {
  envs::Transition t;
  t.s = s;
  t.a = a;
  t.s_next = s_next;
  return t;
}

// Spliced forward-time trajectory: `generated` synthetic steps ahead of two
// original steps, rewards 0 except a final 1, RTGs consistent at the given
// discount.
trajdata::Trajectory spliced_traj(std::size_t generated, double discount) {
  trajdata::Trajectory t;
  const std::size_t n = generated + 2;
  for (std::size_t i = 0; i < n; ++i) {
    t.states.push_back(static_cast<int>(i));
    t.actions.push_back(static_cast<int>(i % 4));
    t.rewards.push_back(i + 1 == n ? 1.0 : 0.0);
  }
  t.done = true;
  t.provenance = trajdata::Provenance::generated;
  t.splice_index = generated;
  trajdata::recompute_rtgs(t, discount);
  return t;
}

}  // namespace

TEST_CASE("single-step traces score the raw distance") {
  for (double e : {-3.0, 0.0, 7.5}) {
    ReliabilityTrace trace = make_trace(GammaMode::weighted, 10.0);
    gamma_update(trace, e, 2.25);
    REQUIRE(trace.length() == 1);
    CHECK(trace.gamma[0] == 2.25);
    CHECK(trace.weights[0][0] == 1.0);
    CHECK(trace.u[0] == 0);
  }
}

TEST_CASE("constant distances average to themselves under any weights") {
  ReliabilityTrace trace = make_trace(GammaMode::weighted, 100.0);
  numkit::Rng rng(1);
  for (int t = 0; t < 8; ++t) {
    gamma_update(trace, rng.uniform() * 6.0 - 3.0, 1.75);
    CHECK(trace.gamma.back() == doctest::Approx(1.75).epsilon(1e-12));
  }
}

TEST_CASE("attention weights follow the softmax arithmetic") {
  ReliabilityTrace trace = make_trace(GammaMode::weighted, 10.0);
  gamma_update(trace, 0.0, 1.0);
  gamma_update(trace, std::log(3.0), 0.0);
  REQUIRE(trace.length() == 2);
  CHECK(trace.weights[1][0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(trace.weights[1][1] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(trace.gamma[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("weight rows stay normalized and gamma stays below the max distance") {
  ReliabilityTrace trace = make_trace(GammaMode::weighted, 1e9);
  numkit::Rng rng(2);
  double max_d = 0.0;
  for (int t = 0; t < 20; ++t) {
    const double d = rng.uniform() * 5.0;
    max_d = std::max(max_d, d);
    gamma_update(trace, rng.uniform() * 4.0 - 2.0, d);
    double w_sum = 0.0;
    for (double w : trace.weights.back()) w_sum += w;
    CHECK(w_sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(trace.gamma.back() <= max_d + 1e-12);
  }
}

TEST_CASE("sum mode accumulates monotonically") {
  ReliabilityTrace trace = make_trace(GammaMode::sum, 1e9);
  numkit::Rng rng(3);
  double prev = 0.0, total = 0.0;
  for (int t = 0; t < 10; ++t) {
    const double d = rng.uniform();
    total += d;
    gamma_update(trace, rng.uniform(), d);
    CHECK(trace.gamma.back() == doctest::Approx(total).epsilon(1e-12));
    CHECK(trace.gamma.back() >= prev);
    prev = trace.gamma.back();
    CHECK(trace.weights.back().empty());
  }
}

TEST_CASE("crossing alpha raises the truncation flag and freezes the trace") {
  ReliabilityTrace trace = make_trace(GammaMode::sum, 1.0);
  gamma_update(trace, 0.0, 0.6);
  CHECK(trace.u.back() == 0);
  CHECK_FALSE(trace.truncated());
  gamma_update(trace, 0.0, 0.6);  // total 1.2 > alpha
  CHECK(trace.u.back() == 1);
  CHECK(trace.truncated());
  CHECK_THROWS_AS(gamma_update(trace, 0.0, 0.1), std::logic_error);
  CHECK_THROWS_AS(
      [] {
        ReliabilityTrace t = make_trace(GammaMode::weighted, 1.0);
        gamma_update(t, 0.0, -0.1);
      }(),
      std::invalid_argument);
}

TEST_CASE("vae loss gradients match finite differences on a toy") {
  VaeConfig cfg;
  cfg.state_count = 6;
  cfg.action_count = 3;
  cfg.hidden = 16;
  numkit::Rng init(4);
  Vae vae(cfg, init);

  std::vector<envs::Transition> batch = {
      make_transition(0, 1, 2), make_transition(2, 0, 3), make_transition(3, 2, 5),
      make_transition(5, 1, 4), make_transition(4, 0, 0)};
  numkit::Rng noise_rng(5);
  std::vector<double> noise(batch.size() * 8);
  for (auto& n : noise) n = noise_rng.normal();

  numkit::LossFn f = [&](numkit::Tape& tape) { return vae.loss_graph(tape, batch, noise); };
  numkit::GradCheckResult res = numkit::grad_check(vae.params(), f);
  CHECK(res.checked == vae.params().total_size());
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("untrained loss sits near the uniform-decoder baseline") {
  VaeConfig cfg;
  cfg.state_count = 25;
  cfg.action_count = 4;
  numkit::Rng init(6);
  Vae vae(cfg, init);
  std::vector<envs::Transition> batch;
  numkit::Rng rng(7);
  for (int i = 0; i < 16; ++i)
    batch.push_back(make_transition(static_cast<int>(rng.randint(25)),
                                    static_cast<int>(rng.randint(4)),
                                    static_cast<int>(rng.randint(25))));
  numkit::Tape tape;
  const double loss =
      vae.loss_graph(tape, batch, std::vector<double>(batch.size() * 8, 0.0)).item();
  const double baseline = 2.0 * std::log(25.0) + std::log(4.0);
  CHECK(loss == doctest::Approx(baseline).epsilon(0.05));
}

TEST_CASE("training memorizes a repeated transition and is reproducible") {
  std::vector<envs::Transition> data(120, make_transition(3, 1, 7));
  VaeConfig cfg;
  cfg.state_count = 9;
  cfg.action_count = 4;
  VaeTrainConfig tcfg;
  tcfg.epochs = 100;
  tcfg.learning_rate = 1e-3;

  auto run = [&]() {
    numkit::Rng init(8);
    Vae vae(cfg, init);
    numkit::Rng rng(9);
    VaeTrainReport report = vae.train(data, tcfg, rng);
    return std::make_pair(std::move(vae), report);
  };
  auto [vae, report] = run();
  REQUIRE(report.loss_curve.size() == 100);
  CHECK(report.loss_curve.back() < report.loss_curve.front());
  const double err = vae.recon_error(3, 1, 7);
  CHECK(err >= 0.0);
  CHECK(err < 0.1);
  CHECK(vae.recon_error(3, 1, 7) == err);  // posterior-mean determinism

  auto [vae_b, report_b] = run();
  CHECK(report_b.loss_curve == report.loss_curve);
  CHECK(vae_b.params().flat_values() == vae.params().flat_values());

  CHECK_THROWS_WITH_AS(
      [&] {
        std::vector<envs::Transition> tiny(50, make_transition(0, 0, 0));
        numkit::Rng init2(10);
        Vae v(cfg, init2);
        numkit::Rng r(11);
        v.train(tiny, tcfg, r);
      }(),
      doctest::Contains("at least 100"), std::invalid_argument);
}

TEST_CASE("alpha calibration follows the nearest-rank percentile") {
  VaeConfig cfg;
  cfg.state_count = 9;
  cfg.action_count = 4;
  cfg.hidden = 16;
  numkit::Rng init(12);
  Vae vae(cfg, init);
  std::vector<envs::Transition> data;
  numkit::Rng rng(13);
  for (int i = 0; i < 40; ++i)
    data.push_back(make_transition(static_cast<int>(rng.randint(9)),
                                   static_cast<int>(rng.randint(4)),
                                   static_cast<int>(rng.randint(9))));
  std::vector<double> scores;
  for (const auto& t : data) scores.push_back(vae.recon_error(t.s, t.a, t.s_next));
  std::sort(scores.begin(), scores.end());

  Threshold top = calibrate_alpha(vae, data, 100.0);
  CHECK(top.alpha == scores.back());
  CHECK(top.percentile == 100.0);
  CHECK(calibrate_alpha(vae, data, 0.0).alpha == scores.front());
  CHECK(calibrate_alpha(vae, data, 50.0).alpha == scores[19]);  // ceil(20)-1
  CHECK(calibrate_alpha(vae, data, 97.5).alpha == scores[38]);  // ceil(39)-1

  // Every calibration transition scores at or below the max-percentile alpha.
  for (double s : scores) CHECK(s <= top.alpha);

  std::vector<envs::Transition> same(10, make_transition(1, 2, 3));
  const double only = vae.recon_error(1, 2, 3);
  for (double p : {0.0, 37.0, 100.0}) CHECK(calibrate_alpha(vae, same, p).alpha == only);

  CHECK_THROWS_AS(calibrate_alpha(vae, {}, 100.0), std::invalid_argument);
  CHECK_THROWS_AS(calibrate_alpha(vae, data, 101.0), std::invalid_argument);
}

TEST_CASE("threshold records round-trip through disk") {
  Threshold t;
  t.alpha = 0.12345678901234567;
  t.percentile = 97.5;
  t.dataset_digest = "00DEADBEEF123456";
  const std::string path = temp_path("threshold.kv");
  save_threshold(t, path);
  Threshold back = load_threshold(path);
  CHECK(back.alpha == t.alpha);
  CHECK(back.percentile == t.percentile);
  CHECK(back.dataset_digest == t.dataset_digest);
  std::remove(path.c_str());
}

TEST_CASE("vae checkpoints round-trip bit-exactly and reject other kinds") {
  VaeConfig cfg;
  cfg.state_count = 9;
  cfg.action_count = 4;
  cfg.hidden = 16;
  numkit::Rng init(14);
  Vae vae(cfg, init);
  const std::string path = temp_path("vae.ckpt");
  vae.save(path);
  CHECK(ckpt::peek(path).kind == "vae");
  Vae loaded = Vae::load(path);
  CHECK(loaded.config().state_count == 9);
  CHECK(loaded.config().hidden == 16);
  CHECK(loaded.params().flat_values() == vae.params().flat_values());
  CHECK(loaded.recon_error(2, 1, 5) == vae.recon_error(2, 1, 5));

  numkit::ParamStore store;
  store.add("w", numkit::Tensor::leaf({1}, {1.0}, true));
  util::KeyValue kv;
  const std::string other = temp_path("other.ckpt");
  ckpt::save(other, "demo", kv, store);
  CHECK_THROWS_WITH_AS(Vae::load(other), doctest::Contains("not a transition scorer"),
                       std::runtime_error);
  std::remove(other.c_str());
  std::remove(path.c_str());
}

TEST_CASE("relabeling with beta 0 and no truncation is the identity") {
  trajdata::Trajectory traj = spliced_traj(3, 0.9);
  ReliabilityTrace trace = make_trace(GammaMode::weighted, 2.0);
  gamma_update(trace, 0.1, 0.5);
  gamma_update(trace, -0.3, 1.0);
  gamma_update(trace, 0.2, 0.25);
  REQUIRE_FALSE(trace.truncated());
  trajdata::Trajectory out = pessimistic_relabel(traj, trace, 2.0, 0.0, 0.9);
  CHECK(out.rewards == traj.rewards);
  CHECK(out.rtgs == traj.rtgs);
  CHECK(out.states == traj.states);
  CHECK(out.splice_index == traj.splice_index);
}

TEST_CASE("the penalty subtracts beta gamma over alpha per generated step") {
  trajdata::Trajectory traj = spliced_traj(1, 1.0);
  traj.rewards[0] = 1.0;  // generated step reward
  trajdata::recompute_rtgs(traj, 1.0);
  ReliabilityTrace trace = make_trace(GammaMode::weighted, 2.0);
  gamma_update(trace, 0.0, 2.0);  // gamma equals alpha
  trajdata::Trajectory out = pessimistic_relabel(traj, trace, 2.0, 0.5, 1.0);
  CHECK(out.rewards[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.rewards[1] == traj.rewards[1]);
  CHECK(out.rewards[2] == traj.rewards[2]);
  // RTGs recomputed from the relabeled rewards.
  CHECK(out.rtgs[0] == doctest::Approx(0.5 + out.rtgs[1]).epsilon(1e-15));
}

TEST_CASE("relabeled rewards never exceed the originals") {
  numkit::Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t generated = 1 + rng.randint(4);
    trajdata::Trajectory traj = spliced_traj(generated, 0.99);
    ReliabilityTrace trace = make_trace(GammaMode::weighted, 1.5);
    for (std::size_t i = 0; i < generated; ++i) {
      if (trace.truncated()) break;
      gamma_update(trace, rng.uniform() * 2.0 - 1.0, rng.uniform());
    }
    if (trace.length() < generated) continue;  // truncated early; relabel rejects
    const double beta = rng.uniform() * 2.0;
    trajdata::Trajectory out = pessimistic_relabel(traj, trace, 1.5, beta, 0.99);
    REQUIRE(out.length() + (trace.truncated() ? 1 : 0) == traj.length());
    const std::size_t dropped = trace.truncated() ? 1 : 0;
    for (std::size_t j = 0; j < out.length(); ++j)
      CHECK(out.rewards[j] <= traj.rewards[j + dropped] + 1e-12);
  }
}

TEST_CASE("a truncated trace drops the frontier step") {
  trajdata::Trajectory traj = spliced_traj(2, 0.9);
  ReliabilityTrace trace = make_trace(GammaMode::sum, 1.0);
  gamma_update(trace, 0.0, 0.8);
  gamma_update(trace, 0.0, 0.8);  // 1.6 > alpha, truncates
  REQUIRE(trace.truncated());
  trajdata::Trajectory out = pessimistic_relabel(traj, trace, 1.0, 0.5, 0.9);
  REQUIRE(out.length() == traj.length() - 1);
  CHECK(out.splice_index == 1);
  CHECK(out.states == std::vector<int>(traj.states.begin() + 1, traj.states.end()));
  // The surviving generated step keeps its penalty; originals keep rewards
  // and, because RTG is a suffix sum, their RTG values too.
  CHECK(out.rewards[0] == doctest::Approx(traj.rewards[1] - 0.5 * 0.8 / 1.0));
  CHECK(out.rewards[1] == traj.rewards[2]);
  CHECK(out.rewards[2] == traj.rewards[3]);
  CHECK(out.rtgs[1] == traj.rtgs[2]);
  CHECK(out.rtgs[2] == traj.rtgs[3]);
}

TEST_CASE("relabeling validates its inputs") {
  trajdata::Trajectory traj = spliced_traj(2, 0.9);
  ReliabilityTrace trace = make_trace(GammaMode::weighted, 1.0);
  gamma_update(trace, 0.0, 0.1);
  CHECK_THROWS_WITH_AS(pessimistic_relabel(traj, trace, 1.0, 0.5, 0.9),
                       doctest::Contains("trace covers"), std::invalid_argument);
  gamma_update(trace, 0.0, 0.1);
  trajdata::Trajectory no_splice = traj;
  no_splice.splice_index.reset();
  CHECK_THROWS_WITH_AS(pessimistic_relabel(no_splice, trace, 1.0, 0.5, 0.9),
                       doctest::Contains("splice"), std::invalid_argument);
  CHECK_THROWS_AS(pessimistic_relabel(traj, trace, 0.0, 0.5, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(pessimistic_relabel(traj, trace, 1.0, -0.1, 0.9), std::invalid_argument);
}

TEST_CASE("impossible transitions score above the in-data spread") {
  auto env = envs::boxball();
  numkit::Rng collect(16);
  auto dataset = envs::collect_dataset(env, envs::PolicyQuality::random, 80, collect, 0.99);
  std::vector<envs::Transition> transitions;
  for (const auto& t : dataset) {
    auto tr = envs::extract_transitions(env, t);
    transitions.insert(transitions.end(), tr.begin(), tr.end());
  }
  REQUIRE(transitions.size() >= 100);

  VaeConfig cfg;
  cfg.state_count = env.width * env.height;
  cfg.action_count = envs::kActionCount;
  numkit::Rng init(17);
  Vae vae(cfg, init);
  VaeTrainConfig tcfg;
  tcfg.epochs = 10;
  numkit::Rng rng(18);
  vae.train(transitions, tcfg, rng);

  std::vector<double> scores;
  for (const auto& t : transitions) scores.push_back(vae.recon_error(t.s, t.a, t.s_next));
  std::sort(scores.begin(), scores.end());
  const double median = scores[scores.size() / 2];

  // Through the wall below the goal row: (5,7) up to (5,8) is blocked, so
  // this transition can never occur in data.
  const int from = env.cell(5, 7), to = env.cell(5, 8);
  REQUIRE_FALSE(envs::is_possible(env, from, envs::kUp, to));
  const double impossible = vae.recon_error(from, envs::kUp, to);
  CHECK(impossible > median);

  // A teleport across the room is even further off-manifold.
  const double teleport = vae.recon_error(env.cell(1, 1), envs::kUp, env.cell(8, 8));
  CHECK(teleport > median);
}
