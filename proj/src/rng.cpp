#include "rtlab/rng.hpp"

#include <cmath>

namespace rtlab::numkit {

double Rng::normal() {
  // u1 is nudged away from zero so log(u1) stays finite.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace rtlab::numkit
