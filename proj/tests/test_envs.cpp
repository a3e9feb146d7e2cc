#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include "rtlab/grid_env.hpp"
#include "rtlab/trajectory.hpp"

using namespace rtlab;
using namespace rtlab::envs;

namespace {

std::string read_golden(const std::string& name) {
  std::ifstream in(std::string(RTLAB_SOURCE_DIR) + "/golden/" + name, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Unweighted shortest path length start -> goal, -1 if unreachable.
int bfs_distance(const GridEnv& env) {
  std::vector<int> dist(env.cell_count(), -1);
  std::deque<int> queue{env.start};
  dist[env.start] = 0;
  while (!queue.empty()) {
    const int s = queue.front();
    queue.pop_front();
    for (int a = 0; a < kActionCount; ++a) {
      const int n = step(env, s, a).s_next;
      if (dist[n] < 0) {
        dist[n] = dist[s] + 1;
        queue.push_back(n);
      }
    }
  }
  return dist[env.goal];
}

void require_valid_dataset(const GridEnv& env,
                           const std::vector<trajdata::Trajectory>& ds) {
  for (const auto& traj : ds) {
    REQUIRE(traj.consistent());
    REQUIRE(traj.length() >= 1);
    REQUIRE(traj.length() <= static_cast<std::size_t>(env.step_limit));
    REQUIRE(traj.states.front() == env.start);
    REQUIRE(traj.provenance == trajdata::Provenance::original);
    REQUIRE(!traj.splice_index.has_value());
    auto trs = extract_transitions(env, traj);
    REQUIRE(trs.size() == traj.length());
    for (std::size_t t = 0; t < trs.size(); ++t) {
      REQUIRE(is_possible(env, trs[t].s, trs[t].a, trs[t].s_next));
      CHECK(trs[t].done == (t + 1 == trs.size() && traj.done));
      if (t + 1 < trs.size()) CHECK(trs[t].s_next == traj.states[t + 1]);
    }
    if (traj.done) {
      CHECK(trs.back().s_next == env.goal);
      CHECK(traj.rewards.back() == 1.0);
    } else {
      CHECK(traj.length() == static_cast<std::size_t>(env.step_limit));
    }
    auto expected = trajdata::compute_rtg(traj.rewards, 0.99);
    REQUIRE(traj.rtgs == expected);
  }
}

double mean_return(const std::vector<trajdata::Trajectory>& ds) {
  double sum = 0.0;
  for (const auto& t : ds) sum += trajdata::trajectory_return(t);
  return ds.empty() ? 0.0 : sum / static_cast<double>(ds.size());
}

}  // namespace

TEST_CASE("rtg backward recursion matches hand-computed values") {
  auto rtg = trajdata::compute_rtg({1.0, 2.0, 3.0}, 0.5);
  REQUIRE(rtg.size() == 3);
  CHECK(rtg[2] == 3.0);
  CHECK(rtg[1] == 3.5);
  CHECK(rtg[0] == 2.75);
  CHECK(trajdata::compute_rtg({1.0, 1.0, 1.0}, 1.0) == std::vector<double>{3.0, 2.0, 1.0});
  auto discounted = trajdata::compute_rtg({1.0, 0.0, 2.0}, 0.9);
  CHECK(discounted[0] == doctest::Approx(2.62).epsilon(1e-12));
  CHECK(discounted[1] == doctest::Approx(1.8).epsilon(1e-12));
  CHECK(discounted[2] == 2.0);
  CHECK(trajdata::compute_rtg({}, 0.9).empty());

  trajdata::Trajectory traj;
  CHECK(trajdata::trajectory_return(traj) == 0.0);
  traj.states = {0, 1};
  traj.actions = {0, 0};
  traj.rewards = {0.0, 1.0};
  trajdata::recompute_rtgs(traj, 0.99);
  CHECK(traj.rtgs == std::vector<double>{0.99, 1.0});
  CHECK(trajdata::trajectory_return(traj) == 0.99);
}

TEST_CASE("rtg recursion identity holds on random rewards") {
  numkit::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> rewards(1 + rng.randint(30));
    for (auto& r : rewards) r = rng.normal();
    const double gamma = rng.uniform();
    auto rtg = trajdata::compute_rtg(rewards, gamma);
    CHECK(rtg.back() == rewards.back());
    for (std::size_t i = 0; i + 1 < rtg.size(); ++i)
      CHECK(rtg[i] == rewards[i] + gamma * rtg[i + 1]);
  }
}

TEST_CASE("step moves, blocks at edges and walls, rewards only the goal") {
  auto env = boxball();
  REQUIRE(env.width == 10);
  REQUIRE(env.height == 10);
  REQUIRE(env.start == env.cell(1, 1));
  REQUIRE(env.goal == env.cell(8, 8));
  REQUIRE(env.step_limit == 50);

  auto tr = step(env, env.cell(1, 1), kRight);
  CHECK(tr.s_next == env.cell(2, 1));
  CHECK(tr.r == 0.0);
  CHECK(!tr.done);
  CHECK(step(env, env.cell(1, 1), kUp).s_next == env.cell(1, 2));
  CHECK(step(env, env.cell(1, 1), kDown).s_next == env.cell(1, 0));
  CHECK(step(env, env.cell(1, 1), kLeft).s_next == env.cell(0, 1));

  CHECK(step(env, env.cell(0, 0), kLeft).s_next == env.cell(0, 0));
  CHECK(step(env, env.cell(0, 0), kDown).s_next == env.cell(0, 0));
  CHECK(step(env, env.cell(9, 9), kRight).s_next == env.cell(9, 9));
  CHECK(step(env, env.cell(9, 9), kUp).s_next == env.cell(9, 9));

  // The crossing between (x,7) and (x,8) is blocked for x in 5..8, in both
  // directions; x=4 passes.
  for (int x = 5; x <= 8; ++x) {
    CHECK(step(env, env.cell(x, 7), kUp).s_next == env.cell(x, 7));
    CHECK(step(env, env.cell(x, 8), kDown).s_next == env.cell(x, 8));
  }
  CHECK(step(env, env.cell(4, 7), kUp).s_next == env.cell(4, 8));
  CHECK(step(env, env.cell(9, 7), kUp).s_next == env.cell(9, 8));

  auto win = step(env, env.cell(7, 8), kRight);
  CHECK(win.s_next == env.goal);
  CHECK(win.r == 1.0);
  CHECK(win.done);
  auto win2 = step(env, env.cell(8, 9), kDown);
  CHECK(win2.s_next == env.goal);
  CHECK(win2.done);

  CHECK_THROWS_AS(step(env, -1, kUp), std::out_of_range);
  CHECK_THROWS_AS(step(env, env.cell_count(), kUp), std::out_of_range);
  CHECK_THROWS_AS(step(env, 0, 4), std::out_of_range);
  CHECK_THROWS_AS(step(env, 0, -1), std::out_of_range);
}

TEST_CASE("is_possible accepts exactly the deterministic outcome") {
  auto env = boxball();
  CHECK(is_possible(env, env.cell(1, 1), kRight, env.cell(2, 1)));
  CHECK(!is_possible(env, env.cell(1, 1), kRight, env.cell(1, 1)));
  CHECK(!is_possible(env, env.cell(1, 1), kRight, env.cell(3, 1)));
  // A bumped move claims "stayed"; claiming the blocked target is impossible.
  CHECK(is_possible(env, env.cell(5, 7), kUp, env.cell(5, 7)));
  CHECK(!is_possible(env, env.cell(5, 7), kUp, env.cell(5, 8)));
  // Teleport across the room.
  CHECK(!is_possible(env, env.cell(1, 1), kUp, env.cell(8, 8)));
}

TEST_CASE("add_wall rejects non-adjacent cells") {
  auto env = boxball();
  CHECK_THROWS_AS(env.add_wall(env.cell(0, 0), env.cell(2, 0)), std::invalid_argument);
  CHECK_THROWS_AS(env.add_wall(env.cell(0, 0), env.cell(1, 1)), std::invalid_argument);
  CHECK_THROWS_AS(env.add_wall(env.cell(0, 0), env.cell(0, 0)), std::invalid_argument);
}

TEST_CASE("boxball layout matches the frozen map byte for byte") {
  CHECK(layout_text(boxball()) == read_golden("boxball_map.txt"));
}

TEST_CASE("layout round-trips through parse for both rooms") {
  for (const auto& env : {boxball(), four_rooms()}) {
    auto parsed = parse_layout(layout_text(env), env.name, env.step_limit, env.reward);
    CHECK(parsed.width == env.width);
    CHECK(parsed.height == env.height);
    CHECK(parsed.start == env.start);
    CHECK(parsed.goal == env.goal);
    CHECK(parsed.walls == env.walls);
    CHECK(parsed.step_limit == env.step_limit);
  }
}

TEST_CASE("parse_layout rejects malformed maps") {
  CHECK_THROWS_AS(parse_layout("S X\n   \nG .\n", "bad", 10), std::runtime_error);
  CHECK_THROWS_AS(parse_layout("S .\n", "no-goal", 10), std::runtime_error);
  CHECK_THROWS_AS(parse_layout("S .\n   \nG .\n   \n", "even-rows", 10), std::runtime_error);
  // '#' on a cell position instead of a boundary.
  CHECK_THROWS_AS(parse_layout("S #\n   \nG .\n", "bad-wall", 10), std::runtime_error);
}

TEST_CASE("four_rooms doors are the only crossings between rooms") {
  auto env = four_rooms();
  REQUIRE(env.width == 11);
  REQUIRE(env.height == 11);
  REQUIRE(env.start == env.cell(1, 1));
  REQUIRE(env.goal == env.cell(9, 9));
  // Vertical divider: passable only at y=2 and y=8.
  for (int y = 0; y < 11; ++y) {
    const bool open = (y == 2 || y == 8);
    CHECK((step(env, env.cell(4, y), kRight).s_next == env.cell(5, y)) == open);
  }
  // Horizontal divider: passable only at x=2 and x=8.
  for (int x = 0; x < 11; ++x) {
    const bool open = (x == 2 || x == 8);
    CHECK((step(env, env.cell(x, 4), kUp).s_next == env.cell(x, 5)) == open);
  }
  CHECK(bfs_distance(env) == 16);
  CHECK(bfs_distance(boxball()) == 14);
}

TEST_CASE("collector tiers produce valid data with ordered quality") {
  auto env = boxball();
  numkit::Rng rng_random(51), rng_medium(52), rng_expert(53);
  auto random_ds = collect_dataset(env, PolicyQuality::random, 50, rng_random, 0.99);
  auto medium_ds = collect_dataset(env, PolicyQuality::medium, 50, rng_medium, 0.99);
  auto expert_ds = collect_dataset(env, PolicyQuality::expert, 50, rng_expert, 0.99);
  REQUIRE(random_ds.size() == 50);
  require_valid_dataset(env, random_ds);
  require_valid_dataset(env, medium_ds);
  require_valid_dataset(env, expert_ds);

  const double gf_random = goal_fraction(random_ds);
  const double gf_medium = goal_fraction(medium_ds);
  const double gf_expert = goal_fraction(expert_ds);
  CHECK(gf_random < 0.5);
  CHECK(gf_expert >= 0.9);
  CHECK(gf_medium > gf_random);
  CHECK(gf_medium <= gf_expert);
  CHECK(mean_return(random_ds) < mean_return(medium_ds));
  CHECK(mean_return(medium_ds) < mean_return(expert_ds));

  // A goal-reaching run earns exactly gamma^(len-1) as its first rtg: only
  // the final reward is nonzero and the recursion multiplies by gamma once
  // per earlier step.
  for (const auto& traj : expert_ds) {
    if (!traj.done) continue;
    double expect = 1.0;
    for (std::size_t i = 1; i < traj.length(); ++i) expect = 0.99 * expect;
    CHECK(trajdata::trajectory_return(traj) == expect);
  }
}

TEST_CASE("collector converges in the four-room maze") {
  // Undirected exploration stalls against this maze's doors, so the
  // collector's optimistic retraining pass has to carry it.
  auto env = four_rooms();
  numkit::Rng rng(7);
  auto ds = collect_dataset(env, PolicyQuality::medium, 40, rng, 0.99);
  require_valid_dataset(env, ds);
  CHECK(goal_fraction(ds) >= 0.5);
}

TEST_CASE("collector is seed-deterministic and stream-sensitive") {
  auto env = boxball();
  numkit::Rng a(7), b(7), c(8);
  auto ds_a = collect_dataset(env, PolicyQuality::random, 10, a, 0.99);
  auto ds_b = collect_dataset(env, PolicyQuality::random, 10, b, 0.99);
  auto ds_c = collect_dataset(env, PolicyQuality::random, 10, c, 0.99);
  REQUIRE(ds_a.size() == ds_b.size());
  bool all_equal = true, any_diff_c = false;
  for (std::size_t i = 0; i < ds_a.size(); ++i) {
    all_equal = all_equal && ds_a[i].states == ds_b[i].states &&
                ds_a[i].actions == ds_b[i].actions;
    any_diff_c = any_diff_c || ds_a[i].states != ds_c[i].states ||
                 ds_a[i].actions != ds_c[i].actions;
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
}

TEST_CASE("extract_transitions flags only a done trajectory's last step") {
  auto env = boxball();
  trajdata::Trajectory traj;
  traj.states = {env.cell(7, 8), env.goal};
  traj.actions = {kRight, kUp};
  traj.rewards = {1.0, 0.0};
  traj.rtgs = trajdata::compute_rtg(traj.rewards, 0.99);
  traj.done = false;
  auto trs = extract_transitions(env, traj);
  REQUIRE(trs.size() == 2);
  CHECK(!trs[0].done);
  CHECK(!trs[1].done);
  CHECK(trs[1].s_next == env.cell(8, 9));
  traj.done = true;
  CHECK(extract_transitions(env, traj)[1].done);

  traj.actions.pop_back();
  CHECK_THROWS_AS(extract_transitions(env, traj), std::invalid_argument);
}
