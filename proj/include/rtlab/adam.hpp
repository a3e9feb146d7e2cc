#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rtlab/tensor.hpp"

namespace rtlab::numkit {

// Named trainable tensors in registration order. The order is part of the
// contract: checkpoints, Adam state, and flattened gradient views all use it.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);     // t must require grad
  const Tensor& get(const std::string& name) const;  // throws if unknown
  bool has(const std::string& name) const;

  std::size_t count() const { return params_.size(); }
  const std::string& name_at(std::size_t i) const { return names_[i]; }
  const Tensor& at(std::size_t i) const { return params_[i]; }
  Tensor& at(std::size_t i) { return params_[i]; }

  std::size_t total_size() const;
  void zero_grads();
  std::vector<double> flat_values() const;
  void set_flat_values(const std::vector<double>& flat);
  std::vector<double> flat_grads() const;            // absent grads read as 0

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment accumulators, laid out to match a ParamStore.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  long long step = 0;
  static AdamState init(const ParamStore& params);
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(ParamStore& params, double max_norm);

// One Adam update with bias correction. Throws on non-finite gradients,
// naming the offending parameter.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg);

}  // namespace rtlab::numkit
