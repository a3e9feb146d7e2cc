#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <string>

#include "rtlab/rng.hpp"
#include "rtlab/trajdata.hpp"
#include "rtlab/util.hpp"

using namespace rtlab;
using namespace rtlab::trajdata;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("trajdata_test_") + name;
}

Trajectory make_traj(const std::vector<int>& states, const std::vector<int>& actions,
                     const std::vector<double>& rewards, double gamma = 0.99) {
  Trajectory t;
  t.states = states;
  t.actions = actions;
  t.rewards = rewards;
  t.rtgs = compute_rtg(rewards, gamma);
  return t;
}

Trajectory random_traj(numkit::Rng& rng, int state_count) {
  const std::size_t len = 1 + rng.randint(12);
  Trajectory t;
  for (std::size_t i = 0; i < len; ++i) {
    t.states.push_back(static_cast<int>(rng.randint(static_cast<std::uint64_t>(state_count))));
    t.actions.push_back(static_cast<int>(rng.randint(4)));
    t.rewards.push_back(rng.randint(2) ? 1.0 : 0.0);
  }
  t.rtgs = compute_rtg(t.rewards, 0.99);
  t.done = rng.randint(2) != 0;
  if (rng.randint(2)) {
    t.provenance = Provenance::generated;
    t.splice_index = rng.randint(len);
  }
  return t;
}

}  // namespace

TEST_CASE("build_vocab collects rewards and freezes monotone rtg bins") {
  std::vector<Trajectory> ds = {
      make_traj({5, 6}, {1, 2}, {0.0, 1.0}),
      make_traj({0, 1, 2}, {0, 0, 0}, {0.0, 0.0, 1.0}),
  };
  auto vocab = build_vocab(100, 4, ds);
  CHECK(vocab.state_count == 100);
  CHECK(vocab.action_count == 4);
  CHECK(vocab.rewards == std::vector<double>{0.0, 1.0});
  REQUIRE(vocab.rtg_bins() == 32);
  REQUIRE(vocab.rtg_edges.size() == 33);
  double lo = 1e300, hi = -1e300;
  for (const auto& t : ds)
    for (double v : t.rtgs) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  CHECK(vocab.rtg_edges.front() == lo);
  CHECK(vocab.rtg_edges.back() == hi);
  for (std::size_t i = 0; i + 1 < vocab.rtg_edges.size(); ++i)
    REQUIRE(vocab.rtg_edges[i] < vocab.rtg_edges[i + 1]);

  CHECK(vocab.slot_size(kSlotState) == 100);
  CHECK(vocab.slot_size(kSlotAction) == 4);
  CHECK(vocab.slot_size(kSlotReward) == 2);
  CHECK(vocab.slot_size(kSlotRtg) == 32);

  CHECK_THROWS_AS(build_vocab(100, 4, {}), std::invalid_argument);
  // All-equal rtgs widen to a unit-width range instead of collapsing.
  auto flat = build_vocab(10, 4, {make_traj({0}, {0}, {0.0})});
  CHECK(flat.rtg_edges.front() == 0.0);
  CHECK(flat.rtg_edges.back() == 1.0);
}

TEST_CASE("reward codec is exact on the observed set and rejects others") {
  auto vocab = build_vocab(10, 4, {make_traj({0, 1}, {0, 0}, {0.25, 1.0})});
  REQUIRE(vocab.rewards.size() == 2);
  for (int tok = 0; tok < 2; ++tok)
    CHECK(vocab.encode_reward(vocab.decode_reward(tok)) == tok);
  CHECK(vocab.encode_reward(0.25) == 0);
  CHECK(vocab.encode_reward(1.0) == 1);
  CHECK_THROWS_AS(vocab.encode_reward(0.5), std::out_of_range);
  CHECK_THROWS_AS(vocab.decode_reward(2), std::out_of_range);
}

TEST_CASE("rtg codec hits boundary bins and stays within half a bin width") {
  auto vocab = build_vocab(10, 4, {make_traj({0, 1, 2, 3}, {0, 0, 0, 0},
                                             {0.0, 0.0, 0.0, 1.0})});
  const double lo = vocab.rtg_edges.front(), hi = vocab.rtg_edges.back();
  CHECK(vocab.encode_rtg(lo) == 0);
  CHECK(vocab.encode_rtg(hi) == 31);

  numkit::Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double v = lo + (hi - lo) * rng.uniform();
    const int bin = vocab.encode_rtg(v);
    REQUIRE(bin >= 0);
    REQUIRE(bin < 32);
    REQUIRE(v >= vocab.rtg_edges[static_cast<std::size_t>(bin)]);
    REQUIRE(v <= vocab.rtg_edges[static_cast<std::size_t>(bin) + 1]);
    const double center = vocab.decode_rtg(bin);
    const double half =
        0.5 * (vocab.rtg_edges[static_cast<std::size_t>(bin) + 1] -
               vocab.rtg_edges[static_cast<std::size_t>(bin)]);
    CHECK(std::abs(v - center) <= half * (1.0 + 1e-12));
  }

  std::uint64_t clamped = 0;
  CHECK(vocab.encode_rtg(lo - 1.0, &clamped) == 0);
  CHECK(clamped == 1);
  CHECK(vocab.encode_rtg(hi + 1.0, &clamped) == 31);
  CHECK(clamped == 2);
  CHECK(vocab.encode_rtg(hi + 1.0) == 31);  // null counter is allowed
  CHECK_THROWS_AS(vocab.decode_rtg(32), std::out_of_range);
}

TEST_CASE("tokenize lays out steps forward and reversed backward") {
  auto traj = make_traj({5, 6}, {1, 2}, {0.0, 1.0});
  auto vocab = build_vocab(100, 4, {traj});
  // rtgs are [0.99, 1.0]: the range minimum lands in bin 0, the maximum in
  // the top bin.
  auto fwd = tokenize(traj, vocab, Direction::forward);
  REQUIRE(fwd.step_count == 2);
  CHECK(fwd.direction == Direction::forward);
  CHECK(fwd.tokens == std::vector<int>{5, 1, 0, 0, 6, 2, 1, 31});
  auto bwd = tokenize(traj, vocab, Direction::backward);
  CHECK(bwd.direction == Direction::backward);
  CHECK(bwd.tokens == std::vector<int>{6, 2, 1, 31, 5, 1, 0, 0});

  auto single = make_traj({3}, {2}, {1.0});
  auto vocab1 = build_vocab(10, 4, {single});
  CHECK(tokenize(single, vocab1, Direction::forward).tokens ==
        tokenize(single, vocab1, Direction::backward).tokens);

  Trajectory bad = traj;
  bad.rewards[0] = 0.5;
  CHECK_THROWS_AS(tokenize(bad, vocab, Direction::forward), std::out_of_range);
  bad = traj;
  bad.states[0] = 100;
  CHECK_THROWS_AS(tokenize(bad, vocab, Direction::forward), std::out_of_range);
}

TEST_CASE("backward tokens reversed stepwise equal forward tokens") {
  numkit::Rng rng(17);
  std::vector<Trajectory> ds;
  for (int i = 0; i < 40; ++i) ds.push_back(random_traj(rng, 50));
  auto vocab = build_vocab(50, 4, ds);
  for (const auto& traj : ds) {
    auto fwd = tokenize(traj, vocab, Direction::forward);
    auto bwd = tokenize(traj, vocab, Direction::backward);
    REQUIRE(fwd.tokens.size() == bwd.tokens.size());
    std::vector<int> unreversed;
    for (std::size_t g = bwd.step_count; g-- > 0;)
      for (int k = 0; k < kSlotsPerStep; ++k)
        unreversed.push_back(bwd.tokens[kSlotsPerStep * g + static_cast<std::size_t>(k)]);
    CHECK(unreversed == fwd.tokens);
  }
}

TEST_CASE("detokenize inverts tokenize up to rtg quantization") {
  numkit::Rng rng(23);
  std::vector<Trajectory> ds;
  for (int i = 0; i < 40; ++i) ds.push_back(random_traj(rng, 50));
  auto vocab = build_vocab(50, 4, ds);
  const double half_width = 0.5 * (vocab.rtg_edges[1] - vocab.rtg_edges[0]);
  for (const auto& traj : ds) {
    for (auto dir : {Direction::forward, Direction::backward}) {
      auto back = detokenize(tokenize(traj, vocab, dir), vocab);
      CHECK(back.states == traj.states);
      CHECK(back.actions == traj.actions);
      CHECK(back.rewards == traj.rewards);
      REQUIRE(back.rtgs.size() == traj.rtgs.size());
      for (std::size_t t = 0; t < traj.rtgs.size(); ++t)
        CHECK(std::abs(back.rtgs[t] - traj.rtgs[t]) <= half_width * (1.0 + 1e-12));
    }
  }
  TokenSequence bad;
  bad.tokens = {0, 0, 0};
  bad.step_count = 1;
  CHECK_THROWS_AS(detokenize(bad, vocab), std::invalid_argument);
}

TEST_CASE("dataset save/load round-trips every field bit-exactly") {
  numkit::Rng rng(31);
  std::vector<Trajectory> ds;
  for (int i = 0; i < 500; ++i) {
    auto t = random_traj(rng, 100);
    // Exercise full-precision doubles, not just tidy 0/1 rewards.
    for (auto& r : t.rewards) r += 1e-3 * rng.normal();
    t.rtgs = compute_rtg(t.rewards, 0.99);
    ds.push_back(std::move(t));
  }
  const std::string path = temp_path("roundtrip.jsonl");
  save_dataset(ds, path);
  auto loaded = load_dataset(path);
  REQUIRE(loaded.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(loaded[i].states == ds[i].states);
    CHECK(loaded[i].actions == ds[i].actions);
    CHECK(loaded[i].rewards == ds[i].rewards);
    CHECK(loaded[i].rtgs == ds[i].rtgs);
    CHECK(loaded[i].done == ds[i].done);
    CHECK(loaded[i].provenance == ds[i].provenance);
    CHECK(loaded[i].splice_index == ds[i].splice_index);
  }
  std::remove(path.c_str());
}

TEST_CASE("dataset loader reports malformed lines by number") {
  const std::string good =
      R"({"states":[1],"actions":[0],"rewards":[0],"rtgs":[0],"done":false,)"
      R"("provenance":"original","splice_index":null})";
  const std::string path = temp_path("malformed.jsonl");

  util::write_file(path, "");
  CHECK(load_dataset(path).empty());

  util::write_file(path, good + "\n" + good + "\n{oops\n");
  CHECK_THROWS_WITH_AS(load_dataset(path),
                       doctest::Contains("line 3"), std::runtime_error);

  util::write_file(path, good + "\n" + R"({"states":[1)");
  CHECK_THROWS_WITH_AS(load_dataset(path),
                       doctest::Contains("line 2"), std::runtime_error);

  util::write_file(path, good + "\n\n" + good + "\n");
  CHECK_THROWS_WITH_AS(load_dataset(path),
                       doctest::Contains("line 2"), std::runtime_error);

  // Unequal field lengths are data corruption, not just bad syntax.
  util::write_file(
      path,
      R"({"states":[1,2],"actions":[0],"rewards":[0],"rtgs":[0],"done":false,)"
      R"("provenance":"original","splice_index":null})" "\n");
  CHECK_THROWS_WITH_AS(load_dataset(path),
                       doctest::Contains("line 1"), std::runtime_error);

  util::write_file(path, good + "\n");
  auto one = load_dataset(path);
  REQUIRE(one.size() == 1);
  CHECK(!one[0].splice_index.has_value());
  std::remove(path.c_str());
}

TEST_CASE("vocab sidecar round-trips and validates on load") {
  numkit::Rng rng(41);
  std::vector<Trajectory> ds;
  for (int i = 0; i < 20; ++i) {
    auto t = random_traj(rng, 100);
    for (auto& r : t.rewards) r += 1e-3 * rng.normal();
    t.rtgs = compute_rtg(t.rewards, 0.99);
    ds.push_back(std::move(t));
  }
  auto vocab = build_vocab(100, 4, ds);
  const std::string path = temp_path("vocab.json");
  save_vocab(vocab, path);
  auto loaded = load_vocab(path);
  CHECK(loaded.state_count == vocab.state_count);
  CHECK(loaded.action_count == vocab.action_count);
  CHECK(loaded.rewards == vocab.rewards);
  CHECK(loaded.rtg_edges == vocab.rtg_edges);

  util::write_file(path, "{\"state_count\":4}");
  CHECK_THROWS_AS(load_vocab(path), std::runtime_error);
  util::write_file(path,
                   R"({"state_count":4,"action_count":4,"rewards":[0],"rtg_edges":[1,0]})");
  CHECK_THROWS_WITH_AS(load_vocab(path), doctest::Contains("not increasing"),
                       std::runtime_error);
  std::remove(path.c_str());
}
