#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstddef>
#include <string>
#include <vector>

#include "rtlab/grid_env.hpp"
#include "rtlab/render.hpp"
#include "rtlab/rng.hpp"
#include "rtlab/trajdata.hpp"

using namespace rtlab;
using namespace rtlab::render;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

// Walks the env with the given actions so every transition is producible.
trajdata::Trajectory walk(const envs::GridEnv& env, const std::vector<int>& actions) {
  trajdata::Trajectory traj;
  int s = env.start;
  for (int a : actions) {
    envs::Transition tr = envs::step(env, s, a);
    traj.states.push_back(s);
    traj.actions.push_back(a);
    traj.rewards.push_back(tr.r);
    traj.done = tr.done;
    s = tr.s_next;
  }
  trajdata::recompute_rtgs(traj, 0.99);
  return traj;
}

}  // namespace

TEST_CASE("an empty dataset renders the grid alone") {
  envs::GridEnv env = envs::boxball();
  RenderStats stats;
  std::string svg = render_svg(env, {}, &stats);

  CHECK(stats.trajectories == 0);
  CHECK(stats.segments == 0);
  CHECK(stats.impossible_segments == 0);
  CHECK(count_of(svg, "<polyline") == 0);
  CHECK(count_of(svg, "class=\"impossible\"") == 0);
  CHECK(count_of(svg, "class=\"wall\"") == env.walls.size());
  CHECK(count_of(svg, "class=\"start\"") == 1);
  CHECK(count_of(svg, "class=\"goal\"") == 1);
  CHECK(count_of(svg, "class=\"grid\"") == static_cast<std::size_t>(env.width + env.height + 2));
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("environment walks draw clean polylines") {
  envs::GridEnv env = envs::boxball();
  std::vector<trajdata::Trajectory> ds;
  ds.push_back(walk(env, {envs::kUp, envs::kUp, envs::kRight}));
  ds.push_back(walk(env, {envs::kRight, envs::kRight}));
  ds[1].provenance = trajdata::Provenance::generated;

  RenderStats stats;
  std::string svg = render_svg(env, ds, &stats);
  CHECK(stats.trajectories == 2);
  CHECK(stats.segments == 5);
  CHECK(stats.impossible_segments == 0);
  CHECK(count_of(svg, "<polyline") == 2);
  CHECK(count_of(svg, "class=\"traj env\"") == 1);
  CHECK(count_of(svg, "class=\"traj generated\"") == 1);
  CHECK(count_of(svg, "class=\"impossible\"") == 0);
}

TEST_CASE("impossible transitions get highlighted overlays") {
  envs::GridEnv env = envs::boxball();

  trajdata::Trajectory teleport;
  teleport.states = {env.cell(1, 1), env.cell(2, 7), env.cell(2, 8)};
  teleport.actions = {envs::kRight, envs::kUp, envs::kUp};
  teleport.rewards = {0.0, 0.0, 0.0};
  trajdata::recompute_rtgs(teleport, 0.99);

  trajdata::Trajectory wall_cross;
  wall_cross.states = {env.cell(6, 7), env.cell(6, 8)};
  wall_cross.actions = {envs::kUp, envs::kRight};
  wall_cross.rewards = {0.0, 0.0};
  wall_cross.provenance = trajdata::Provenance::generated;
  trajdata::recompute_rtgs(wall_cross, 0.99);

  REQUIRE_FALSE(envs::is_possible(env, teleport.states[0], teleport.actions[0],
                                  teleport.states[1]));
  REQUIRE(envs::is_possible(env, teleport.states[1], teleport.actions[1], teleport.states[2]));
  REQUIRE_FALSE(envs::is_possible(env, wall_cross.states[0], wall_cross.actions[0],
                                  wall_cross.states[1]));

  RenderStats stats;
  std::string svg = render_svg(env, {teleport, wall_cross}, &stats);
  CHECK(stats.impossible_segments == 2);
  CHECK(count_of(svg, "<line class=\"impossible\"") == 2);
}

TEST_CASE("blocked moves that stay in place are not flagged") {
  envs::GridEnv env = envs::boxball();
  // Walking up against the wall below the goal row leaves the agent in place.
  trajdata::Trajectory bump;
  const int c = env.cell(6, 7);
  bump.states = {c, c, c};
  bump.actions = {envs::kUp, envs::kUp, envs::kUp};
  bump.rewards = {0.0, 0.0, 0.0};
  trajdata::recompute_rtgs(bump, 0.99);

  RenderStats stats;
  render_svg(env, {bump}, &stats);
  CHECK(stats.impossible_segments == 0);
}

TEST_CASE("rendering is deterministic") {
  envs::GridEnv env = envs::four_rooms();
  numkit::Rng rng(3);
  auto ds = envs::collect_dataset(env, envs::PolicyQuality::random, 8, rng, 0.99);
  std::string a = render_svg(env, ds, nullptr);
  std::string b = render_svg(env, ds, nullptr);
  CHECK(a == b);
  CHECK(count_of(a, "<polyline") == ds.size());
}

TEST_CASE("collected datasets render with no highlights") {
  envs::GridEnv env = envs::boxball();
  numkit::Rng rng(7);
  auto ds = envs::collect_dataset(env, envs::PolicyQuality::medium, 20, rng, 0.99);
  RenderStats stats;
  render_svg(env, ds, &stats);
  CHECK(stats.trajectories == ds.size());
  CHECK(stats.impossible_segments == 0);
  std::size_t steps = 0;
  for (const auto& t : ds) steps += t.length();
  CHECK(stats.segments == steps);
}

TEST_CASE("zero-length trajectories are skipped") {
  envs::GridEnv env = envs::boxball();
  std::vector<trajdata::Trajectory> ds(2);
  RenderStats stats;
  std::string svg = render_svg(env, ds, &stats);
  CHECK(stats.trajectories == 0);
  CHECK(count_of(svg, "<polyline") == 0);
}
