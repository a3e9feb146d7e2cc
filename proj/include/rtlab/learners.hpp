#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rtlab/adam.hpp"
#include "rtlab/grid_env.hpp"
#include "rtlab/rng.hpp"
#include "rtlab/trajectory.hpp"

namespace rtlab::learners {

// Shared two-hidden-layer tanh trunk over one-hot states. Both policies use
// the same shape: state -> hidden -> hidden -> one logit per action.
struct MlpConfig {
  int state_count = 0;
  int action_count = 0;
  int hidden = 64;

  void validate() const;  // throws std::invalid_argument
};

struct BcTrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
};

struct BcTrainReport {
  std::vector<double> loss_curve;  // mean cross-entropy per epoch
  std::size_t pairs = 0;           // state-action pairs seen per epoch
};

// Behavioral cloning: cross-entropy fit of the dataset's action choices,
// greedy argmax at act time.
class BcPolicy {
 public:
  BcPolicy(const MlpConfig& cfg, numkit::Rng& rng);

  const MlpConfig& config() const { return cfg_; }
  const numkit::ParamStore& params() const { return params_; }

  // Shuffled minibatch epochs over every (state, action) pair in the dataset.
  // Throws if the dataset has no steps or a non-finite loss appears.
  BcTrainReport train(const std::vector<trajdata::Trajectory>& dataset,
                      const BcTrainConfig& tcfg, numkit::Rng& rng);

  int act(int state) const;                        // argmax, first index on ties
  std::vector<double> action_probs(int state) const;

  void save(const std::string& path) const;
  static BcPolicy load(const std::string& path);

 private:
  MlpConfig cfg_;
  numkit::ParamStore params_;
};

struct BcqTrainConfig {
  int steps = 20000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  double discount = 0.99;
  int target_sync = 500;  // gradient steps between target-network copies
};

struct BcqTrainReport {
  std::vector<double> loss_curve;  // mean joint loss per 100-step window
  std::size_t transitions = 0;
};

// Batch-constrained Q-learning for discrete actions. A behavioral head is
// fit alongside the Q head; action choice is restricted to actions whose
// behavioral probability is at least filter_tau times the most likely one.
class BcqPolicy {
 public:
  BcqPolicy(const MlpConfig& cfg, double filter_tau, numkit::Rng& rng);

  const MlpConfig& config() const { return cfg_; }
  double filter_tau() const { return filter_tau_; }
  const numkit::ParamStore& params() const { return params_; }

  // Uniform minibatches over the transition view of the dataset. Joint loss:
  // squared TD error on the Q head plus cross-entropy on the behavioral head,
  // one Adam update for both. Targets use the online network's filtered
  // argmax and the frozen copy's value. Throws on an empty dataset or a
  // non-finite loss.
  BcqTrainReport train(const envs::GridEnv& env,
                       const std::vector<trajdata::Trajectory>& dataset,
                       const BcqTrainConfig& tcfg, numkit::Rng& rng);

  // Argmax of Q over the filtered actions; always a member of the filter set.
  int act(int state) const;
  std::vector<int> allowed_actions(int state) const;  // never empty
  std::vector<double> q_values(int state) const;
  std::vector<double> behavioral_probs(int state) const;

  void save(const std::string& path) const;
  static BcqPolicy load(const std::string& path);

 private:
  MlpConfig cfg_;
  double filter_tau_ = 0.3;
  numkit::ParamStore params_;
};

// Per-episode results kept in episode order; aggregates are plain means.
struct EvalReport {
  std::size_t episodes = 0;
  bool defined = false;  // false when no episodes ran
  double mean_return = 0.0;
  double success_rate = 0.0;
  double mean_length = 0.0;
  std::vector<double> returns;
  std::vector<int> successes;          // 1 on reaching the goal
  std::vector<std::size_t> lengths;
  std::vector<std::uint64_t> episode_seeds;
};

using Policy = std::function<int(int state, numkit::Rng& rng)>;

// Rolls `episodes` episodes from the env start, each capped at the env step
// limit, each with its own rng derived from the caller's by episode index.
// Results do not depend on call order inside an episode batch.
EvalReport evaluate(const envs::GridEnv& env, const Policy& policy,
                    std::size_t episodes, numkit::Rng& rng);

}  // namespace rtlab::learners
