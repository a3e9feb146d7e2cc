#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace rtlab::trajdata {

enum class Provenance { original, generated };

// One episode. states[t] is the cell where actions[t] was taken; the
// terminal next-state is implicit (episode end). All four per-step vectors
// have equal length. rtgs[t] is forward-time reward-to-go regardless of how
// the trajectory is later serialized for the model.
struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> rtgs;
  bool done = false;                       // goal reached
  Provenance provenance = Provenance::original;
  // Boundary between generated and original content. Backward augmentation
  // puts generated steps at [0, splice) with originals after; the forward
  // ablation reverses the roles (originals at [0, splice), generated after).
  std::optional<std::size_t> splice_index;

  std::size_t length() const { return states.size(); }
  bool consistent() const {
    return actions.size() == states.size() && rewards.size() == states.size() &&
           rtgs.size() == states.size();
  }
};

// R_t = sum_{h>=t} gamma^{h-t} r_h via the backward recursion
// R_t = r_t + gamma * R_{t+1}.
std::vector<double> compute_rtg(const std::vector<double>& rewards, double gamma);

void recompute_rtgs(Trajectory& traj, double gamma);

double trajectory_return(const Trajectory& traj);  // rtgs.front(), 0 if empty

}  // namespace rtlab::trajdata
