#pragma once

#include <functional>

#include "rtlab/adam.hpp"
#include "rtlab/tensor.hpp"

namespace rtlab::numkit {

// Scalar loss evaluated on a fresh tape; must be a pure function of the
// current parameter values.
using LossFn = std::function<Tensor(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;      // index into the flattened parameter vector
  std::size_t checked = 0;
};

// Central finite differences against the tape gradient over every parameter
// coordinate in the store. Relative error per coordinate:
//   |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)
GradCheckResult grad_check(ParamStore& params, const LossFn& f, double h = 1e-5);

}  // namespace rtlab::numkit
