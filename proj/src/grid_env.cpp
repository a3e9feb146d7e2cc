#include "rtlab/grid_env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rtlab::envs {

void GridEnv::add_wall(int c1, int c2) {
  const int ax = x_of(c1), ay = y_of(c1), bx = x_of(c2), by = y_of(c2);
  if (std::abs(ax - bx) + std::abs(ay - by) != 1)
    throw std::invalid_argument("add_wall: cells are not adjacent");
  walls.insert({std::min(c1, c2), std::max(c1, c2)});
}

GridEnv boxball() {
  GridEnv env;
  env.name = "boxball";
  env.width = 10;
  env.height = 10;
  env.start = env.cell(1, 1);
  env.goal = env.cell(8, 8);
  env.step_limit = 50;
  for (int x = 5; x <= 8; ++x) env.add_wall(env.cell(x, 7), env.cell(x, 8));
  return env;
}

GridEnv four_rooms() {
  GridEnv env;
  env.name = "four_rooms";
  env.width = 11;
  env.height = 11;
  env.start = env.cell(1, 1);
  env.goal = env.cell(9, 9);
  env.step_limit = 100;
  for (int y = 0; y < 11; ++y)
    if (y != 2 && y != 8) env.add_wall(env.cell(4, y), env.cell(5, y));
  for (int x = 0; x < 11; ++x)
    if (x != 2 && x != 8) env.add_wall(env.cell(x, 4), env.cell(x, 5));
  return env;
}

Transition step(const GridEnv& env, int s, int a) {
  if (s < 0 || s >= env.cell_count())
    throw std::out_of_range("step: cell " + std::to_string(s) + " outside grid");
  if (a < 0 || a >= kActionCount)
    throw std::out_of_range("step: action " + std::to_string(a) + " invalid");
  const int x = env.x_of(s), y = env.y_of(s);
  int nx = x, ny = y;
  switch (a) {
    case kUp: ny = y + 1; break;
    case kDown: ny = y - 1; break;
    case kLeft: nx = x - 1; break;
    case kRight: nx = x + 1; break;
  }
  int s_next = s;
  if (env.in_bounds(nx, ny)) {
    const int cand = env.cell(nx, ny);
    if (!env.crossing_blocked(s, cand)) s_next = cand;
  }
  Transition tr;
  tr.s = s;
  tr.a = a;
  tr.s_next = s_next;
  tr.done = (s_next == env.goal);
  tr.r = tr.done ? env.reward.goal_reward : env.reward.step_reward;
  return tr;
}

bool is_possible(const GridEnv& env, int s, int a, int s_next) {
  return step(env, s, a).s_next == s_next;
}

std::string layout_text(const GridEnv& env) {
  const int rows = 2 * env.height - 1, cols = 2 * env.width - 1;
  std::vector<std::string> grid(rows, std::string(cols, ' '));
  for (int y = 0; y < env.height; ++y)
    for (int x = 0; x < env.width; ++x) {
      const int c = env.cell(x, y);
      char ch = '.';
      if (c == env.start) ch = 'S';
      if (c == env.goal) ch = 'G';
      grid[2 * (env.height - 1 - y)][2 * x] = ch;
    }
  for (const auto& [c1, c2] : env.walls) {
    const int x1 = env.x_of(c1), y1 = env.y_of(c1), x2 = env.x_of(c2), y2 = env.y_of(c2);
    if (y1 == y2) {
      grid[2 * (env.height - 1 - y1)][2 * std::min(x1, x2) + 1] = '#';
    } else {
      grid[2 * (env.height - 1 - std::max(y1, y2)) + 1][2 * x1] = '#';
    }
  }
  std::ostringstream out;
  for (const auto& line : grid) out << line << "\n";
  return out.str();
}

GridEnv parse_layout(const std::string& text, const std::string& name, int step_limit,
                     RewardSpec reward) {
  std::vector<std::string> lines;
  {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r')) line.pop_back();
      lines.push_back(line);
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
  }
  if (lines.empty() || lines.size() % 2 == 0)
    throw std::runtime_error("parse_layout: expected an odd number of rows");
  std::size_t cols = 0;
  for (const auto& l : lines) cols = std::max(cols, l.size());
  if (cols % 2 == 0) throw std::runtime_error("parse_layout: expected an odd column count");
  for (auto& l : lines) l.resize(cols, ' ');

  GridEnv env;
  env.name = name;
  env.height = static_cast<int>(lines.size() + 1) / 2;
  env.width = static_cast<int>(cols + 1) / 2;
  env.step_limit = step_limit;
  env.reward = reward;
  int start = -1, goal = -1;
  for (int y = 0; y < env.height; ++y)
    for (int x = 0; x < env.width; ++x) {
      const char ch = lines[2 * (env.height - 1 - y)][2 * x];
      if (ch == 'S') start = env.cell(x, y);
      else if (ch == 'G') goal = env.cell(x, y);
      else if (ch != '.')
        throw std::runtime_error("parse_layout: unexpected cell character '" +
                                 std::string(1, ch) + "'");
    }
  if (start < 0 || goal < 0)
    throw std::runtime_error("parse_layout: map must contain exactly one S and one G");
  env.start = start;
  env.goal = goal;
  for (std::size_t r = 0; r < lines.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (lines[r][c] != '#') continue;
      if (r % 2 == 0 && c % 2 == 1) {
        const int y = env.height - 1 - static_cast<int>(r) / 2;
        const int x = static_cast<int>(c - 1) / 2;
        env.add_wall(env.cell(x, y), env.cell(x + 1, y));
      } else if (r % 2 == 1 && c % 2 == 0) {
        const int y_hi = env.height - 1 - static_cast<int>(r - 1) / 2;
        const int x = static_cast<int>(c) / 2;
        env.add_wall(env.cell(x, y_hi), env.cell(x, y_hi - 1));
      } else {
        throw std::runtime_error("parse_layout: '#' must sit between two cells");
      }
    }
  return env;
}

std::vector<Transition> extract_transitions(const GridEnv& env,
                                            const trajdata::Trajectory& traj) {
  if (!traj.consistent())
    throw std::invalid_argument("extract_transitions: trajectory field lengths differ");
  std::vector<Transition> out;
  out.reserve(traj.length());
  for (std::size_t t = 0; t < traj.length(); ++t) {
    Transition tr;
    tr.s = traj.states[t];
    tr.a = traj.actions[t];
    tr.r = traj.rewards[t];
    if (t + 1 < traj.length()) {
      tr.s_next = traj.states[t + 1];
      tr.done = false;
    } else {
      tr.s_next = step(env, tr.s, tr.a).s_next;
      tr.done = traj.done;
    }
    out.push_back(tr);
  }
  return out;
}

double goal_fraction(const std::vector<trajdata::Trajectory>& ds) {
  if (ds.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& t : ds)
    if (t.done) ++hit;
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

namespace {

using QTable = std::vector<std::array<double, 4>>;

int greedy_action(const QTable& q, int s) {
  int best = 0;
  for (int a = 1; a < kActionCount; ++a)
    if (q[s][a] > q[s][best]) best = a;
  return best;
}

double greedy_return(const GridEnv& env, const QTable& q, double gamma) {
  int s = env.start;
  double ret = 0.0, disc = 1.0;
  for (int t = 0; t < env.step_limit; ++t) {
    Transition tr = step(env, s, greedy_action(q, s));
    ret += disc * tr.r;
    disc *= gamma;
    s = tr.s_next;
    if (tr.done) break;
  }
  return ret;
}

struct QTraining {
  QTable final_q;
  QTable medium_q;
  double final_return = 0.0;
};

// One fixed-budget online Q-learning pass from the given initial table.
// Snapshots every eval_every episodes feed the medium-checkpoint pick.
QTraining train_q_pass(const GridEnv& env, numkit::Rng& rng, double gamma, double q_init) {
  const int episodes = 4000, eval_every = 20;
  const double lr = 0.2, eps = 0.2;
  QTable q(env.cell_count(), {q_init, q_init, q_init, q_init});
  std::vector<std::pair<double, QTable>> snapshots;
  for (int ep = 0; ep < episodes; ++ep) {
    int s = env.start;
    for (int t = 0; t < env.step_limit; ++t) {
      const int a = (rng.uniform() < eps) ? static_cast<int>(rng.randint(kActionCount))
                                          : greedy_action(q, s);
      Transition tr = step(env, s, a);
      double best_next = 0.0;
      if (!tr.done) best_next = q[tr.s_next][greedy_action(q, tr.s_next)];
      q[s][a] += lr * (tr.r + gamma * best_next - q[s][a]);
      s = tr.s_next;
      if (tr.done) break;
    }
    if ((ep + 1) % eval_every == 0) snapshots.emplace_back(greedy_return(env, q, gamma), q);
  }
  QTraining out;
  out.final_q = q;
  out.final_return = greedy_return(env, q, gamma);
  out.medium_q = out.final_q;
  for (const auto& [ret, snap] : snapshots)
    if (ret > 0.0 && ret >= 0.5 * out.final_return) {
      out.medium_q = snap;
      break;
    }
  return out;
}

// Zero-initialized pass first; when its greedy policy never reaches the
// goal (sparse mazes where undirected exploration stalls), retrain from an
// optimistic table, which sweeps unvisited actions systematically.
QTraining train_q(const GridEnv& env, numkit::Rng& rng, double gamma) {
  QTraining out = train_q_pass(env, rng, gamma, 0.0);
  if (out.final_return <= 0.0) out = train_q_pass(env, rng, gamma, 1.0);
  if (out.final_return <= 0.0)
    throw std::runtime_error("collect_dataset: Q-learning failed to reach the goal in " +
                             env.name);
  return out;
}

trajdata::Trajectory rollout(const GridEnv& env, const QTable& q, double eps,
                             numkit::Rng& rng, double gamma) {
  trajdata::Trajectory traj;
  int s = env.start;
  for (int t = 0; t < env.step_limit; ++t) {
    const int a = (rng.uniform() < eps) ? static_cast<int>(rng.randint(kActionCount))
                                        : greedy_action(q, s);
    Transition tr = step(env, s, a);
    traj.states.push_back(s);
    traj.actions.push_back(a);
    traj.rewards.push_back(tr.r);
    s = tr.s_next;
    if (tr.done) {
      traj.done = true;
      break;
    }
  }
  traj.rtgs = trajdata::compute_rtg(traj.rewards, gamma);
  return traj;
}

}  // namespace

std::vector<trajdata::Trajectory> collect_dataset(const GridEnv& env, PolicyQuality quality,
                                                  std::size_t n_traj, numkit::Rng& rng,
                                                  double gamma) {
  QTable q(env.cell_count(), {0.0, 0.0, 0.0, 0.0});
  double eps = 1.0;
  if (quality != PolicyQuality::random) {
    QTraining trained = train_q(env, rng, gamma);
    if (quality == PolicyQuality::expert) {
      q = trained.final_q;
      eps = 0.05;
    } else {
      q = trained.medium_q;
      eps = 0.3;
    }
  }
  std::vector<trajdata::Trajectory> ds;
  ds.reserve(n_traj);
  for (std::size_t i = 0; i < n_traj; ++i) ds.push_back(rollout(env, q, eps, rng, gamma));
  return ds;
}

}  // namespace rtlab::envs
