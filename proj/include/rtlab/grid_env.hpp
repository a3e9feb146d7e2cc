#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rtlab/rng.hpp"
#include "rtlab/trajectory.hpp"

namespace rtlab::envs {

// Actions move one cell; blocked moves (edge or wall crossing) leave the
// agent in place.
enum Action { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
constexpr int kActionCount = 4;

struct RewardSpec {
  double step_reward = 0.0;
  double goal_reward = 1.0;
};

// Walls are thin: they block the boundary between two adjacent cells, in
// both directions. Stored as normalized (low cell, high cell) index pairs.
struct GridEnv {
  std::string name;
  int width = 0;
  int height = 0;
  int start = 0;
  int goal = 0;
  int step_limit = 0;
  RewardSpec reward = {};
  std::set<std::pair<int, int>> walls;

  int cell_count() const { return width * height; }
  int cell(int x, int y) const { return y * width + x; }
  int x_of(int c) const { return c % width; }
  int y_of(int c) const { return c / width; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  bool crossing_blocked(int c1, int c2) const {
    return walls.count({std::min(c1, c2), std::max(c1, c2)}) != 0;
  }
  void add_wall(int c1, int c2);  // validates adjacency
};

struct Transition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  bool done = false;  // set only on reaching the goal
};

// 10x10 room, start (1,1), goal (8,8), horizontal wall just below the goal
// row spanning columns 5..8 so the direct approach must detour.
GridEnv boxball();

// 11x11 four-rooms variant: dividers between columns 4|5 and rows 4|5 with
// one door per wall arm, start (1,1), goal (9,9).
GridEnv four_rooms();

// Pure, deterministic single step.
Transition step(const GridEnv& env, int s, int a);

bool is_possible(const GridEnv& env, int s, int a, int s_next);

// Double-resolution text map: cells at even/even character positions
// ('.', 'S', 'G'), '#' at an odd position marks the blocked crossing between
// its two adjacent cells, rows printed top (y = height-1) to bottom (y = 0).
std::string layout_text(const GridEnv& env);
GridEnv parse_layout(const std::string& text, const std::string& name, int step_limit,
                     RewardSpec reward = {});

enum class PolicyQuality { random, medium, expert };

// Tabular Q-learning collector. `random` rolls a uniform policy; `expert`
// rolls epsilon=0.05 around the converged greedy policy; `medium` uses the
// earliest training snapshot whose greedy return reached half the converged
// return, rolled at epsilon=0.3.
std::vector<trajdata::Trajectory> collect_dataset(const GridEnv& env, PolicyQuality quality,
                                                  std::size_t n_traj, numkit::Rng& rng,
                                                  double gamma);

// Transition view of a trajectory. Interior next-states come from the stored
// sequence; the final one is completed with the deterministic env step, so
// generated (model-made) steps keep whatever the sequence claims.
std::vector<Transition> extract_transitions(const GridEnv& env,
                                            const trajdata::Trajectory& traj);

double goal_fraction(const std::vector<trajdata::Trajectory>& ds);

}  // namespace rtlab::envs
