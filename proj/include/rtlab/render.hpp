#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rtlab/grid_env.hpp"
#include "rtlab/trajectory.hpp"

namespace rtlab::render {

struct RenderStats {
  std::size_t trajectories = 0;
  std::size_t segments = 0;             // drawn path segments
  std::size_t impossible_segments = 0;  // highlighted overlays
};

// One SVG diagram: the grid with walls and start/goal markers, then a
// polyline per trajectory colored by provenance. Stored transitions that the
// env cannot produce get a highlighted overlay segment (class "impossible").
// Each path ends at the deterministic outcome of its final action. With no
// trajectories the image is the grid alone. Same inputs, same bytes.
std::string render_svg(const envs::GridEnv& env,
                       const std::vector<trajdata::Trajectory>& trajectories,
                       RenderStats* stats = nullptr);

}  // namespace rtlab::render
