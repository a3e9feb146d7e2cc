#include "rtlab/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace rtlab::numkit {

GradCheckResult grad_check(ParamStore& params, const LossFn& f, double h) {
  params.zero_grads();
  {
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
  }
  const std::vector<double> g_ad = params.flat_grads();
  std::vector<double> x = params.flat_values();

  GradCheckResult res;
  res.checked = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    params.set_flat_values(x);
    double f_plus;
    {
      Tape tape;
      f_plus = f(tape).item();
    }
    x[i] = saved - h;
    params.set_flat_values(x);
    double f_minus;
    {
      Tape tape;
      f_minus = f(tape).item();
    }
    x[i] = saved;
    const double g_fd = (f_plus - f_minus) / (2.0 * h);
    const double denom = std::max({1.0, std::fabs(g_ad[i]), std::fabs(g_fd)});
    const double rel = std::fabs(g_ad[i] - g_fd) / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_param = i;
    }
  }
  params.set_flat_values(x);
  params.zero_grads();
  return res;
}

}  // namespace rtlab::numkit
