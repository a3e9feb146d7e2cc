#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rtlab/adam.hpp"
#include "rtlab/rng.hpp"
#include "rtlab/tensor.hpp"
#include "rtlab/trajdata.hpp"
#include "rtlab/util.hpp"

namespace rtlab::rtmodel {

struct RtConfig {
  int layers = 2;
  int heads = 4;
  int model_dim = 64;
  int context_steps = 64;
  double dropout = 0.1;
  trajdata::Direction direction = trajdata::Direction::backward;
  double high_reward_quantile = 0.1;  // top-q trajectory returns label H=1
  double guidance_strength = 1.0;     // lambda
  double temperature = 1.0;

  void validate() const;  // model_dim divisible by heads, positive sizes
  util::KeyValue to_key_value() const;
  static RtConfig from_key_value(const util::KeyValue& kv);
};

struct TrainConfig {
  int epochs = 20;
  double learning_rate = 3e-4;
  double clip_norm = 1.0;
  double val_fraction = 0.1;  // held-out split for accuracy reporting
};

struct TrainReport {
  std::vector<double> loss_curve;        // per-epoch mean of the four slot CEs
  std::vector<double> total_loss_curve;  // plus auxiliary heads
  double val_action_accuracy = 0.0;
  std::array<double, 4> val_slot_accuracy{};
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  std::uint64_t rtg_clamp_warnings = 0;
};

// Teacher-forcing graph for one sequence. Row r of `hidden` is the
// predictor state for stream position r (row 0 reads only the start
// marker); slot_logits[k] stacks those rows whose next token has slot k.
struct ForwardGraph {
  std::array<numkit::Tensor, 4> slot_logits;
  std::array<std::vector<int>, 4> slot_targets;
  numkit::Tensor marginal_rtg_logits;  // [steps, rtg bins] at step boundaries
  numkit::Tensor classifier_logits;    // [steps, rtg bins]
  std::vector<int> rtg_targets;        // per boundary row
  numkit::Tensor hidden;               // [1 + 4*steps(+partial), model_dim]
  std::vector<numkit::Tensor> last_attention;  // per head, causal weights
};

// Raw head readouts at the generation frontier (the row after the last
// prefix token), where the next stream token is a new step's state.
struct BoundaryReadout {
  std::vector<double> marginal_logits;    // unnormalized log P(R | prefix)
  std::vector<double> classifier_logits;  // logit of P(H=1 | prefix, R=j) per bin
};

struct SampleOverrides {
  double guidance_strength;
  double temperature;
};

struct GuidanceCounters {
  std::uint64_t fallbacks = 0;   // all-bin numeric underflow in guided scores
  std::uint64_t rtg_clamps = 0;  // seed RTG values outside the vocab bin range
};

// One generated step, in generation order (backward models emit earlier
// timesteps as generation proceeds).
struct GenStep {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  double rtg = 0.0;
  // Per-step attention values from the state-token query: one entry per
  // earlier stream step, final entry = the new step itself.
  std::vector<double> attention;
};

// Returning true truncates generation; the flagged step stays in `steps`.
using StepGate = std::function<bool(const GenStep&)>;

struct Generation {
  std::vector<GenStep> steps;  // generation order
  bool truncated_by_gate = false;
  bool hit_context_limit = false;
};

// Decoder-only causal transformer over 4-slot step groups with tied trunk
// heads: four next-token heads, a boundary-row head for the upcoming step's
// RTG bin, and a boundary-row per-bin high-return classifier.
class RtModel {
 public:
  RtModel(const RtConfig& cfg, const trajdata::Vocab& vocab, numkit::Rng& init_rng);

  const RtConfig& config() const { return cfg_; }
  const trajdata::Vocab& vocab() const { return vocab_; }
  numkit::ParamStore& params() { return params_; }
  const numkit::ParamStore& params() const { return params_; }

  // Builds the full differentiable graph; train_mode enables dropout (which
  // draws from rng). Sequence direction must match the config.
  ForwardGraph forward(numkit::Tape& tape, const trajdata::TokenSequence& seq,
                       bool train_mode, numkit::Rng* rng) const;

  // Loss terms from a forward graph: core = sum of the four slot CEs,
  // auxiliary = marginal-RTG CE + 0.1 * classifier BCE at the true bin.
  struct LossParts {
    numkit::Tensor core;
    numkit::Tensor total;
    double core_value = 0.0;
    double total_value = 0.0;
  };
  LossParts loss(numkit::Tape& tape, const ForwardGraph& graph,
                 double high_return_label) const;

  TrainReport train(const std::vector<trajdata::Trajectory>& dataset,
                    const TrainConfig& tcfg, numkit::Rng& rng);

  // Eval-mode readout of the two boundary heads on a raw token prefix
  // (whole groups only).
  BoundaryReadout boundary_readout(const std::vector<int>& prefix_tokens) const;

  // Renormalized softmax over scores_j = log P(R=j|prefix) +
  // lambda * log sigmoid(clf_j), at the given temperature. Falls back to the
  // unguided distribution (counting it) if every score underflows.
  static std::vector<double> guided_rtg_distribution(const BoundaryReadout& readout,
                                                     double lambda, double temperature,
                                                     GuidanceCounters* counters);

  // Samples one full step: RTG bin first from the guided distribution, then
  // state, action, reward from their heads in stream order. Returns the 4
  // tokens in slot order and the attention row of the state-token query.
  struct StepSample {
    std::array<int, 4> tokens;  // slot order (s, a, r, rtg-bin)
    std::vector<double> attention;
  };
  StepSample guided_sample_step(const std::vector<int>& prefix_tokens, numkit::Rng& rng,
                                const SampleOverrides& overrides,
                                GuidanceCounters* counters) const;

  // Autoregressive continuation from a seed trajectory, one step per
  // iteration, stopping at gate truncation, max_steps, or the context limit.
  Generation generate(const trajdata::Trajectory& seed, std::size_t max_steps,
                      numkit::Rng& rng, const StepGate& gate,
                      const SampleOverrides& overrides,
                      GuidanceCounters* counters) const;

  // High-return label threshold: a trajectory is positive when its return
  // reaches the top high_reward_quantile fraction of dataset returns.
  static double high_return_threshold(const std::vector<trajdata::Trajectory>& dataset,
                                      double quantile);

  void save(const std::string& path) const;
  static RtModel load(const std::string& path, const trajdata::Vocab& vocab);

 private:
  struct TrunkOut {
    numkit::Tensor hidden;
    std::vector<numkit::Tensor> last_attention;
  };
  TrunkOut trunk(numkit::Tape& tape, const std::vector<int>& tokens, bool train_mode,
                 numkit::Rng* rng) const;
  void init_params(numkit::Rng& rng);

  // Eval forward returning the last hidden row and optionally the state-query
  // attention row aggregated per step group.
  struct FrontierOut {
    std::vector<double> hidden_last;
    std::vector<double> attention_row;  // empty unless requested
  };
  FrontierOut frontier(const std::vector<int>& tokens, bool want_attention_row) const;

  std::vector<double> head_logits(const std::vector<double>& row, const char* weight,
                                  const char* bias) const;

  RtConfig cfg_;
  trajdata::Vocab vocab_;
  numkit::ParamStore params_;
};

// Trajectory assembly from a generation: steps are reordered into forward
// time (backward generations reverse), provenance marked generated, rtgs
// taken from the sampled bins (callers typically recompute after relabeling).
trajdata::Trajectory generation_to_trajectory(const Generation& gen,
                                              trajdata::Direction direction);

}  // namespace rtlab::rtmodel
