#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtlab/adam.hpp"
#include "rtlab/grid_env.hpp"
#include "rtlab/rng.hpp"
#include "rtlab/tensor.hpp"
#include "rtlab/util.hpp"

namespace rtlab::reliability {

// Transition plausibility scorer: a small VAE over concatenated one-hots of
// (state, action, next state). Reconstruction error at the posterior mean
// stands in for the distance of a transition from the data distribution.
struct VaeConfig {
  int state_count = 0;
  int action_count = 0;
  int hidden = 64;
  int latent = 8;

  void validate() const;
  int input_dim() const { return 2 * state_count + action_count; }
  util::KeyValue to_key_value() const;
  static VaeConfig from_key_value(const util::KeyValue& kv);
};

struct VaeTrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 3e-4;
  double clip_norm = 1.0;
};

struct VaeTrainReport {
  std::vector<double> loss_curve;  // per-epoch mean of recon CE + KL
};

class Vae {
 public:
  Vae(const VaeConfig& cfg, numkit::Rng& init_rng);

  const VaeConfig& config() const { return cfg_; }
  numkit::ParamStore& params() { return params_; }
  const numkit::ParamStore& params() const { return params_; }

  // Differentiable loss for one batch: reconstruction cross-entropy over the
  // three one-hot blocks plus the diagonal-Gaussian KL, both batch means.
  // `noise` supplies the reparameterization draw, batch_size * latent values.
  numkit::Tensor loss_graph(numkit::Tape& tape,
                            const std::vector<envs::Transition>& batch,
                            const std::vector<double>& noise) const;

  VaeTrainReport train(const std::vector<envs::Transition>& transitions,
                       const VaeTrainConfig& tcfg, numkit::Rng& rng);

  // Deterministic plausibility score: reconstruction negative log-likelihood
  // decoded from the posterior mean (no sampling, KL excluded). Always >= 0.
  double recon_error(int s, int a, int s_next) const;

  void save(const std::string& path) const;
  static Vae load(const std::string& path);

 private:
  void init_params(numkit::Rng& rng);

  VaeConfig cfg_;
  numkit::ParamStore params_;
};

// Calibrated truncation threshold, tied to the dataset that produced it.
struct Threshold {
  double alpha = 0.0;
  double percentile = 100.0;
  std::string dataset_digest;
};

std::uint64_t transitions_digest(const std::vector<envs::Transition>& transitions);

// Nearest-rank percentile of recon_error over every calibration transition;
// the default (100) is the maximum observed error.
Threshold calibrate_alpha(const Vae& vae,
                          const std::vector<envs::Transition>& transitions,
                          double percentile = 100.0);

void save_threshold(const Threshold& t, const std::string& path);
Threshold load_threshold(const std::string& path);

// How per-step distances accumulate into the running reliability score:
// `weighted` is the attention-softmax average, `sum` the plain running total.
enum class GammaMode { weighted, sum };

std::string gamma_mode_name(GammaMode m);
GammaMode gamma_mode_from_name(const std::string& s);  // throws on unknown names

// Running reliability state over the generated steps of one rollout. Entry t
// holds that step's attention value e, distance d, the resulting cumulative
// score gamma, and the truncation flag u (1 once gamma exceeds alpha). A
// truncated trace accepts no further updates.
struct ReliabilityTrace {
  GammaMode mode = GammaMode::weighted;
  double alpha = 0.0;
  std::vector<double> e;
  std::vector<double> d;
  std::vector<double> gamma;
  std::vector<std::vector<double>> weights;  // row t: softmax of e[0..t]
  std::vector<int> u;

  std::size_t length() const { return d.size(); }
  bool truncated() const { return !u.empty() && u.back() == 1; }
};

ReliabilityTrace make_trace(GammaMode mode, double alpha);

// Appends one generated step and recomputes the cumulative score over all
// steps so far. d_new must be >= 0; throws if the trace is already truncated.
void gamma_update(ReliabilityTrace& trace, double e_new, double d_new);

// Applies the reliability penalty to the generated prefix of a spliced
// forward-time trajectory: generated step rewards become r - beta*gamma/alpha,
// a truncated final trace entry drops its step entirely, and RTGs are
// recomputed from the relabeled rewards. Original steps keep their rewards.
// Trace entries are in generation order: entry i is forward-time step
// splice_index-1-i. The trace must cover exactly the generated steps.
trajdata::Trajectory pessimistic_relabel(const trajdata::Trajectory& traj,
                                         const ReliabilityTrace& trace, double alpha,
                                         double beta, double discount);

}  // namespace rtlab::reliability
