#include "rtlab/trajectory.hpp"

#include <stdexcept>

namespace rtlab::trajdata {

std::vector<double> compute_rtg(const std::vector<double>& rewards, double gamma) {
  std::vector<double> rtg(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    rtg[i] = acc;
  }
  return rtg;
}

void recompute_rtgs(Trajectory& traj, double gamma) {
  traj.rtgs = compute_rtg(traj.rewards, gamma);
}

double trajectory_return(const Trajectory& traj) {
  return traj.rtgs.empty() ? 0.0 : traj.rtgs.front();
}

}  // namespace rtlab::trajdata
