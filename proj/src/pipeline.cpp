#include "rtlab/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

namespace rtlab::pipeline {

namespace {

// Forward-time copy of steps [first, last); the done flag survives only when
// the slice keeps the original's final step.
trajdata::Trajectory slice_steps(const trajdata::Trajectory& t, std::size_t first,
                                 std::size_t last) {
  trajdata::Trajectory out;
  out.states.assign(t.states.begin() + first, t.states.begin() + last);
  out.actions.assign(t.actions.begin() + first, t.actions.begin() + last);
  out.rewards.assign(t.rewards.begin() + first, t.rewards.begin() + last);
  out.rtgs.assign(t.rtgs.begin() + first, t.rtgs.begin() + last);
  out.done = t.done && last == t.length();
  out.provenance = t.provenance;
  return out;
}

void append_steps(trajdata::Trajectory& out, const trajdata::Trajectory& src,
                  std::size_t first, std::size_t last) {
  out.states.insert(out.states.end(), src.states.begin() + first, src.states.begin() + last);
  out.actions.insert(out.actions.end(), src.actions.begin() + first,
                     src.actions.begin() + last);
  out.rewards.insert(out.rewards.end(), src.rewards.begin() + first,
                     src.rewards.begin() + last);
  out.rtgs.insert(out.rtgs.end(), src.rtgs.begin() + first, src.rtgs.begin() + last);
}

// Original prefix [0, kept) continued by generated steps in emission order.
// The prefix keeps its raw rewards; RTGs are recomputed throughout because
// the future the prefix discounts over has changed. The done flag comes from
// env-completing the final transition.
trajdata::Trajectory forward_join(const trajdata::Trajectory& original, std::size_t kept,
                                  const std::vector<rtmodel::GenStep>& steps,
                                  const envs::GridEnv& env, double discount) {
  trajdata::Trajectory out;
  append_steps(out, original, 0, kept);
  for (const rtmodel::GenStep& s : steps) {
    out.states.push_back(s.state);
    out.actions.push_back(s.action);
    out.rewards.push_back(s.reward);
    out.rtgs.push_back(s.rtg);
  }
  out.provenance = trajdata::Provenance::generated;
  out.splice_index = kept;
  out.done = envs::step(env, out.states.back(), out.actions.back()).done;
  trajdata::recompute_rtgs(out, discount);
  return out;
}

struct TaskOut {
  GenerationRecord record;
  reliability::ReliabilityTrace trace;
  std::vector<double> raw;
  trajdata::Trajectory traj;
  rtmodel::GuidanceCounters counters;
};

TaskOut run_one(std::size_t index, const rtmodel::RtModel& model,
                const reliability::Vae& vae, const reliability::Threshold& threshold,
                const std::vector<trajdata::Trajectory>& dataset, const envs::GridEnv& env,
                const AugmentConfig& cfg, const numkit::Rng& base) {
  numkit::Rng rng = base.derive(index);
  const bool backward = cfg.direction == trajdata::Direction::backward;
  // In fixed-length mode the trace is recorded but must never truncate, so
  // the gate threshold moves out of reach; relabeling still uses the real one.
  const double gate_alpha = cfg.fixed_length > 0
                                ? std::numeric_limits<double>::infinity()
                                : threshold.alpha;

  TaskOut out;
  out.record.index = index;
  out.trace = reliability::make_trace(cfg.gamma_mode, gate_alpha);

  const std::size_t source = rng.randint(dataset.size());
  const trajdata::Trajectory& origin = dataset[source];
  out.record.source = source;
  const std::size_t len = origin.length();
  if (len == 0) {
    out.record.degenerate = true;
    return out;
  }

  // One uniform draw picks the split: backward generation is seeded with the
  // suffix starting at one of the len states, the forward ablation with the
  // prefix ending at one of them. Either way the seed has at least one step.
  const std::size_t pick = rng.randint(len);
  const std::size_t context = static_cast<std::size_t>(model.config().context_steps);
  std::size_t boundary = 0;
  trajdata::Trajectory seed;
  if (backward) {
    boundary = pick;
    // Conditioning beyond the context is dropped from the far end of the
    // seed (latest steps); the splice itself always uses the full original.
    const std::size_t keep = std::min(len - boundary, context - 1);
    seed = slice_steps(origin, boundary, boundary + keep);
  } else {
    boundary = pick + 1;
    const std::size_t keep = std::min(boundary, context - 1);
    seed = slice_steps(origin, boundary - keep, boundary);
  }
  out.record.boundary = boundary;
  if (seed.length() == 0) {
    out.record.degenerate = true;
    return out;
  }

  std::size_t budget = std::numeric_limits<std::size_t>::max();
  if (cfg.fixed_length > 0) budget = cfg.fixed_length;
  else if (cfg.max_steps > 0) budget = cfg.max_steps;

  rtmodel::StepGate gate;
  int next_state = seed.states.front();
  if (backward) {
    // Generation emits progressively earlier steps, so each new step's
    // successor is the previously emitted state (initially the seed front).
    gate = [&out, &vae, &next_state](const rtmodel::GenStep& step) {
      const double d = vae.recon_error(step.state, step.action, next_state);
      reliability::gamma_update(out.trace, step.attention.back(), d);
      next_state = step.state;
      return out.trace.truncated();
    };
  }

  const rtmodel::SampleOverrides overrides{model.config().guidance_strength,
                                           model.config().temperature};
  rtmodel::Generation gen = model.generate(seed, budget, rng, gate, overrides, &out.counters);
  out.record.raw_length = gen.steps.size();
  out.record.truncated = gen.truncated_by_gate;
  out.record.hit_context = gen.hit_context_limit;
  if (!out.trace.gamma.empty()) out.record.gamma_stop = out.trace.gamma.back();
  for (const rtmodel::GenStep& s : gen.steps) out.raw.push_back(s.reward);

  if (gen.steps.empty()) {
    out.record.degenerate = true;
    out.record.trace_digest = trace_digest(out.trace);
    return out;
  }

  if (backward) {
    trajdata::Trajectory prefix =
        rtmodel::generation_to_trajectory(gen, trajdata::Direction::backward);
    trajdata::Trajectory spliced = splice(prefix, origin, boundary, cfg.discount);
    out.traj = reliability::pessimistic_relabel(spliced, out.trace, threshold.alpha,
                                                cfg.beta, cfg.discount);
    const std::size_t kept = out.traj.splice_index.value();
    out.record.kept_length = kept;
    for (std::size_t j = 0; j < kept; ++j)
      if (!envs::is_possible(env, out.traj.states[j], out.traj.actions[j],
                             out.traj.states[j + 1]))
        ++out.record.impossible;
  } else {
    out.traj = forward_join(origin, boundary, gen.steps, env, cfg.discount);
    out.record.kept_length = gen.steps.size();
    // Transitions whose successor the model invented, starting with the one
    // leading out of the seed.
    for (std::size_t j = boundary - 1; j + 1 < out.traj.length(); ++j)
      if (!envs::is_possible(env, out.traj.states[j], out.traj.actions[j],
                             out.traj.states[j + 1]))
        ++out.record.impossible;
  }
  out.record.trace_digest = trace_digest(out.trace);
  return out;
}

}  // namespace

void AugmentConfig::validate() const {
  if (generations < 1)
    throw std::invalid_argument("AugmentConfig: generations must be >= 1");
  if (beta < 0.0) throw std::invalid_argument("AugmentConfig: beta must be >= 0");
  if (discount <= 0.0 || discount > 1.0)
    throw std::invalid_argument("AugmentConfig: discount must be in (0,1]");
}

util::KeyValue AugmentConfig::to_key_value() const {
  util::KeyValue kv;
  kv.set_int("generations", static_cast<long long>(generations));
  kv.set_int("max_steps", static_cast<long long>(max_steps));
  kv.set("gamma_mode", reliability::gamma_mode_name(gamma_mode));
  kv.set_double("beta", beta);
  kv.set_int("fixed_length", static_cast<long long>(fixed_length));
  kv.set("direction", trajdata::direction_name(direction));
  kv.set_double("discount", discount);
  return kv;
}

AugmentConfig AugmentConfig::from_key_value(const util::KeyValue& kv) {
  AugmentConfig cfg;
  cfg.generations = static_cast<std::size_t>(
      kv.get_int_or("generations", static_cast<long long>(cfg.generations)));
  cfg.max_steps = static_cast<std::size_t>(
      kv.get_int_or("max_steps", static_cast<long long>(cfg.max_steps)));
  cfg.gamma_mode = reliability::gamma_mode_from_name(
      kv.get_or("gamma_mode", reliability::gamma_mode_name(cfg.gamma_mode)));
  cfg.beta = kv.get_double_or("beta", cfg.beta);
  cfg.fixed_length = static_cast<std::size_t>(
      kv.get_int_or("fixed_length", static_cast<long long>(cfg.fixed_length)));
  cfg.direction = trajdata::direction_from_name(
      kv.get_or("direction", trajdata::direction_name(cfg.direction)));
  cfg.discount = kv.get_double_or("discount", cfg.discount);
  cfg.validate();
  return cfg;
}

std::vector<trajdata::Trajectory> AugmentedDataset::combined() const {
  std::vector<trajdata::Trajectory> all = env_trajectories;
  all.insert(all.end(), model_trajectories.begin(), model_trajectories.end());
  return all;
}

std::uint64_t trace_digest(const reliability::ReliabilityTrace& trace) {
  std::string text;
  for (std::size_t i = 0; i < trace.length(); ++i) {
    text += util::format_g17(trace.e[i]);
    text += ' ';
    text += util::format_g17(trace.d[i]);
    text += ' ';
    text += util::format_g17(trace.gamma[i]);
    text += ' ';
    text += std::to_string(trace.u[i]);
    text += '\n';
  }
  return util::fnv1a64(text);
}

trajdata::Trajectory splice(const trajdata::Trajectory& generated_prefix,
                            const trajdata::Trajectory& original, std::size_t boundary,
                            double discount) {
  if (!generated_prefix.consistent() || !original.consistent())
    throw std::invalid_argument("splice: inconsistent trajectory fields");
  if (boundary > original.length())
    throw std::out_of_range("splice: boundary past the original's end");

  trajdata::Trajectory out;
  append_steps(out, generated_prefix, 0, generated_prefix.length());
  append_steps(out, original, boundary, original.length());
  out.provenance = trajdata::Provenance::generated;
  out.splice_index = generated_prefix.length();
  const bool has_suffix = boundary < original.length();
  out.done = has_suffix && original.done;

  // The kept suffix stays bit-identical, RTG fields included; the generated
  // prefix gets RTGs by extending the suffix's return recursion, which
  // matches a whole-trajectory recomputation whenever the original's RTGs
  // are themselves consistent at this discount.
  if (has_suffix) {
    for (std::size_t i = generated_prefix.length(); i-- > 0;)
      out.rtgs[i] = out.rewards[i] + discount * out.rtgs[i + 1];
  } else {
    trajdata::recompute_rtgs(out, discount);
  }
  return out;
}

AugmentedDataset run_rt(const rtmodel::RtModel& model, const reliability::Vae& vae,
                        const reliability::Threshold& threshold,
                        const std::vector<trajdata::Trajectory>& dataset,
                        const envs::GridEnv& env, const AugmentConfig& cfg,
                        numkit::Rng& rng, std::size_t workers) {
  cfg.validate();
  if (model.config().direction != cfg.direction)
    throw std::invalid_argument("run_rt: model and run directions differ");
  if (dataset.empty()) throw std::invalid_argument("run_rt: empty dataset");
  const bool backward = cfg.direction == trajdata::Direction::backward;
  if (backward && !(threshold.alpha > 0.0))
    throw std::invalid_argument("run_rt: threshold alpha must be positive");

  const std::size_t count = cfg.generations;
  std::vector<TaskOut> results(count);
  std::size_t pool_size = workers == 0 ? static_cast<std::size_t>(util::worker_count())
                                       : workers;
  pool_size = std::max<std::size_t>(1, std::min(pool_size, count));

  if (pool_size == 1) {
    for (std::size_t i = 0; i < count; ++i)
      results[i] = run_one(i, model, vae, threshold, dataset, env, cfg, rng);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(pool_size);
    std::vector<std::thread> pool;
    pool.reserve(pool_size);
    for (std::size_t w = 0; w < pool_size; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1))
            results[i] = run_one(i, model, vae, threshold, dataset, env, cfg, rng);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);
  }

  AugmentedDataset out;
  out.env_trajectories = dataset;
  out.config_echo = cfg.to_key_value();
  out.config_echo.set_double("alpha", threshold.alpha);
  out.records.reserve(count);
  out.traces.reserve(count);
  out.raw_rewards.reserve(count);
  AugmentStats& st = out.stats;
  st.generations = count;
  for (TaskOut& r : results) {
    st.degenerate += r.record.degenerate ? 1 : 0;
    st.truncated += r.record.truncated ? 1 : 0;
    st.context_hits += r.record.hit_context ? 1 : 0;
    st.generated_steps += r.record.kept_length;
    st.impossible_steps += r.record.impossible;
    st.guidance_fallbacks += r.counters.fallbacks;
    st.rtg_clamps += r.counters.rtg_clamps;
    if (!r.record.degenerate) out.model_trajectories.push_back(std::move(r.traj));
    out.records.push_back(std::move(r.record));
    out.traces.push_back(std::move(r.trace));
    out.raw_rewards.push_back(std::move(r.raw));
  }
  st.kept = out.model_trajectories.size();
  st.mean_generated_length =
      st.kept ? static_cast<double>(st.generated_steps) / static_cast<double>(st.kept) : 0.0;
  st.truncation_rate = static_cast<double>(st.truncated) / static_cast<double>(count);
  st.impossible_rate = st.generated_steps
                           ? static_cast<double>(st.impossible_steps) /
                                 static_cast<double>(st.generated_steps)
                           : 0.0;
  return out;
}

}  // namespace rtlab::pipeline
