#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtlab/grid_env.hpp"
#include "rtlab/reliability.hpp"
#include "rtlab/rng.hpp"
#include "rtlab/rtmodel.hpp"
#include "rtlab/trajdata.hpp"
#include "rtlab/util.hpp"

namespace rtlab::pipeline {

// One augmentation run: H independent generations, each seeded from a
// uniformly sampled suffix (backward) or prefix (forward ablation) of an
// offline trajectory.
struct AugmentConfig {
  std::size_t generations = 500;  // H
  // Per-generation step budget; 0 means bounded by the model context alone.
  std::size_t max_steps = 0;
  reliability::GammaMode gamma_mode = reliability::GammaMode::weighted;
  double beta = 0.5;
  // Nonzero replaces the reliability gate with a fixed generation length;
  // the trace is still recorded but never truncates.
  std::size_t fixed_length = 0;
  trajdata::Direction direction = trajdata::Direction::backward;
  double discount = 0.99;

  void validate() const;
  util::KeyValue to_key_value() const;
  static AugmentConfig from_key_value(const util::KeyValue& kv);
};

// Per-generation analysis row.
struct GenerationRecord {
  std::size_t index = 0;       // task index
  std::size_t source = 0;      // sampled trajectory in the offline set
  std::size_t boundary = 0;    // splice position within the source
  std::size_t raw_length = 0;  // steps sampled before any truncation drop
  std::size_t kept_length = 0; // generated steps surviving relabeling
  bool truncated = false;
  bool hit_context = false;
  bool degenerate = false;     // no step sampled at all; not added to D_model
  double gamma_stop = 0.0;     // cumulative reliability at the last sampled step
  std::size_t impossible = 0;  // impossible transitions in the kept generated part
  std::uint64_t trace_digest = 0;
};

struct AugmentStats {
  std::size_t generations = 0;
  std::size_t kept = 0;          // trajectories added to the model set
  std::size_t degenerate = 0;
  std::size_t truncated = 0;
  std::size_t context_hits = 0;
  std::size_t generated_steps = 0;   // kept generated steps across the run
  std::size_t impossible_steps = 0;  // among kept generated transitions
  double mean_generated_length = 0.0;
  double truncation_rate = 0.0;
  double impossible_rate = 0.0;
  std::uint64_t guidance_fallbacks = 0;
  std::uint64_t rtg_clamps = 0;
};

struct AugmentedDataset {
  std::vector<trajdata::Trajectory> env_trajectories;
  std::vector<trajdata::Trajectory> model_trajectories;
  std::vector<GenerationRecord> records;                 // one per generation
  std::vector<reliability::ReliabilityTrace> traces;     // one per generation
  std::vector<std::vector<double>> raw_rewards;          // generation order
  AugmentStats stats;
  util::KeyValue config_echo;

  // D = D_env followed by D_model, provenance-tagged.
  std::vector<trajdata::Trajectory> combined() const;
};

// Canonical digest of a trace's (e, d, gamma, u) rows, for manifests.
std::uint64_t trace_digest(const reliability::ReliabilityTrace& trace);

// Joins a generated forward-time prefix onto the original's suffix from
// boundary onward and recomputes RTGs. The suffix fields stay bit-identical
// to the original's. An empty prefix degenerates to the suffix alone.
trajdata::Trajectory splice(const trajdata::Trajectory& generated_prefix,
                            const trajdata::Trajectory& original, std::size_t boundary,
                            double discount);

// The full augmentation loop. Generations are independent tasks with
// per-task rngs derived from (rng seed, task index) and are assembled in
// task order, so the result does not depend on the worker count
// (0 workers = the RT_LAB_THREADS setting).
AugmentedDataset run_rt(const rtmodel::RtModel& model, const reliability::Vae& vae,
                        const reliability::Threshold& threshold,
                        const std::vector<trajdata::Trajectory>& dataset,
                        const envs::GridEnv& env, const AugmentConfig& cfg,
                        numkit::Rng& rng, std::size_t workers = 0);

}  // namespace rtlab::pipeline
