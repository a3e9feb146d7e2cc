#include "rtlab/render.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "rtlab/trajdata.hpp"

namespace rtlab::render {

namespace {

constexpr int kCell = 40;
constexpr int kMargin = 20;

int px(int x) { return kMargin + x * kCell; }

// Grid y grows upward; SVG y grows downward.
int py(const envs::GridEnv& env, int y) { return kMargin + (env.height - 1 - y) * kCell; }

int center_x(const envs::GridEnv& env, int c) { return px(env.x_of(c)) + kCell / 2; }
int center_y(const envs::GridEnv& env, int c) { return py(env, env.y_of(c)) + kCell / 2; }

void line(std::string& out, const char* cls, int x1, int y1, int x2, int y2) {
  out += "<line class=\"" + std::string(cls) + "\" x1=\"" + std::to_string(x1) + "\" y1=\"" +
         std::to_string(y1) + "\" x2=\"" + std::to_string(x2) + "\" y2=\"" +
         std::to_string(y2) + "\"/>\n";
}

void cell_marker(std::string& out, const envs::GridEnv& env, int c, const char* cls) {
  const int inset = 6;
  out += "<rect class=\"" + std::string(cls) + "\" x=\"" +
         std::to_string(px(env.x_of(c)) + inset) + "\" y=\"" +
         std::to_string(py(env, env.y_of(c)) + inset) + "\" width=\"" +
         std::to_string(kCell - 2 * inset) + "\" height=\"" +
         std::to_string(kCell - 2 * inset) + "\"/>\n";
}

}  // namespace

std::string render_svg(const envs::GridEnv& env,
                       const std::vector<trajdata::Trajectory>& trajectories,
                       RenderStats* stats) {
  RenderStats local;
  const int w = 2 * kMargin + env.width * kCell;
  const int h = 2 * kMargin + env.height * kCell;

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
         "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
         std::to_string(h) + "\">\n";
  out += "<style>\n"
         ".grid{stroke:#d8d8d8;stroke-width:1}\n"
         ".wall{stroke:#8b4513;stroke-width:5;stroke-linecap:round}\n"
         ".start{fill:#2e8b57}\n"
         ".goal{fill:#d62728}\n"
         ".traj{fill:none;stroke-width:2.5;stroke-linejoin:round;stroke-opacity:0.55}\n"
         ".env{stroke:#4682b4}\n"
         ".generated{stroke:#e67e22}\n"
         ".impossible{stroke:#d400d4;stroke-width:4;stroke-dasharray:6 4}\n"
         "</style>\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";

  for (int x = 0; x <= env.width; ++x)
    line(out, "grid", px(x), py(env, env.height - 1), px(x), py(env, -1));
  for (int y = 0; y <= env.height; ++y)
    line(out, "grid", px(0), py(env, y - 1), px(env.width), py(env, y - 1));

  for (const auto& wall : env.walls) {
    const int c1 = wall.first, c2 = wall.second;
    if (env.y_of(c1) == env.y_of(c2)) {
      const int xb = px(std::max(env.x_of(c1), env.x_of(c2)));
      line(out, "wall", xb, py(env, env.y_of(c1)), xb, py(env, env.y_of(c1) - 1));
    } else {
      const int yb = py(env, std::max(env.y_of(c1), env.y_of(c2)) - 1);
      line(out, "wall", px(env.x_of(c1)), yb, px(env.x_of(c1) + 1), yb);
    }
  }

  cell_marker(out, env, env.start, "start");
  cell_marker(out, env, env.goal, "goal");

  for (const auto& traj : trajectories) {
    const std::size_t n = traj.length();
    if (n == 0) continue;
    ++local.trajectories;

    // Path points: every stored state plus the outcome of the final action.
    std::vector<int> cells(traj.states.begin(), traj.states.end());
    cells.push_back(envs::step(env, traj.states[n - 1], traj.actions[n - 1]).s_next);

    const char* cls =
        traj.provenance == trajdata::Provenance::generated ? "traj generated" : "traj env";
    out += "<polyline class=\"" + std::string(cls) + "\" points=\"";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) out += " ";
      out += std::to_string(center_x(env, cells[i])) + "," +
             std::to_string(center_y(env, cells[i]));
    }
    out += "\"/>\n";
    local.segments += n;

    for (std::size_t t = 0; t + 1 < n; ++t) {
      if (envs::is_possible(env, traj.states[t], traj.actions[t], traj.states[t + 1])) continue;
      ++local.impossible_segments;
      line(out, "impossible", center_x(env, traj.states[t]), center_y(env, traj.states[t]),
           center_x(env, traj.states[t + 1]), center_y(env, traj.states[t + 1]));
    }
  }

  out += "</svg>\n";
  if (stats) *stats = local;
  return out;
}

}  // namespace rtlab::render
