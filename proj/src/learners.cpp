#include "rtlab/learners.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rtlab/checkpoint.hpp"
#include "rtlab/tensor.hpp"
#include "rtlab/util.hpp"

namespace rtlab::learners {

using numkit::Tensor;

namespace {

constexpr double kInitScale = 0.02;
constexpr int kCurveWindow = 100;

void add_trunk(numkit::ParamStore& params, const std::string& prefix, const MlpConfig& cfg,
               numkit::Rng& rng) {
  auto normal_leaf = [&](const std::string& name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * kInitScale;
    params.add(name, Tensor::leaf(std::move(shape), std::move(v), true));
  };
  const auto S = static_cast<std::size_t>(cfg.state_count);
  const auto H = static_cast<std::size_t>(cfg.hidden);
  const auto A = static_cast<std::size_t>(cfg.action_count);
  normal_leaf(prefix + "w1", {S, H});
  params.add(prefix + "b1", Tensor::zeros({H}, true));
  normal_leaf(prefix + "w2", {H, H});
  params.add(prefix + "b2", Tensor::zeros({H}, true));
  normal_leaf(prefix + "w3", {H, A});
  params.add(prefix + "b3", Tensor::zeros({A}, true));
}

// Logits for one state without touching a tape. The one-hot first layer
// reduces to a row read of w1.
std::vector<double> trunk_logits(const numkit::ParamStore& params, const std::string& prefix,
                                 const MlpConfig& cfg, int state) {
  const Tensor& w1 = params.get(prefix + "w1");
  const Tensor& b1 = params.get(prefix + "b1");
  const Tensor& w2 = params.get(prefix + "w2");
  const Tensor& b2 = params.get(prefix + "b2");
  const Tensor& w3 = params.get(prefix + "w3");
  const Tensor& b3 = params.get(prefix + "b3");
  const std::size_t H = static_cast<std::size_t>(cfg.hidden);
  const std::size_t A = static_cast<std::size_t>(cfg.action_count);
  const std::size_t s = static_cast<std::size_t>(state);

  std::vector<double> h1(H), h2(H), out(A);
  for (std::size_t j = 0; j < H; ++j) h1[j] = std::tanh(w1.at(s, j) + b1.at(j));
  for (std::size_t k = 0; k < H; ++k) {
    double acc = b2.at(k);
    for (std::size_t j = 0; j < H; ++j) acc += h1[j] * w2.at(j, k);
    h2[k] = std::tanh(acc);
  }
  for (std::size_t a = 0; a < A; ++a) {
    double acc = b3.at(a);
    for (std::size_t k = 0; k < H; ++k) acc += h2[k] * w3.at(k, a);
    out[a] = acc;
  }
  return out;
}

// Batched trunk on the tape; the one-hot first layer is a row gather of w1.
Tensor trunk_forward(numkit::Tape& t, const numkit::ParamStore& params,
                     const std::string& prefix, const std::vector<int>& states) {
  Tensor e = t.embedding_rows(params.get(prefix + "w1"), states);
  Tensor h1 = t.tanh(t.add_row_bias(e, params.get(prefix + "b1")));
  Tensor h2 = t.tanh(t.add_row_bias(t.matmul(h1, params.get(prefix + "w2")),
                                    params.get(prefix + "b2")));
  return t.add_row_bias(t.matmul(h2, params.get(prefix + "w3")), params.get(prefix + "b3"));
}

std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

std::size_t argmax_first(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Actions whose behavioral probability is at least tau times the largest one.
// Probability ratios come straight from logit differences, so no
// normalization is needed; the argmax always qualifies.
std::vector<int> filter_actions(const std::vector<double>& bc_logits, double tau) {
  double mx = bc_logits[0];
  for (double v : bc_logits) mx = std::max(mx, v);
  std::vector<int> allowed;
  for (std::size_t a = 0; a < bc_logits.size(); ++a)
    if (std::exp(bc_logits[a] - mx) >= tau) allowed.push_back(static_cast<int>(a));
  return allowed;
}

void shuffle_indices(std::vector<std::size_t>& idx, numkit::Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = rng.randint(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

void check_step(const MlpConfig& cfg, int state, int action, const char* who) {
  if (state < 0 || state >= cfg.state_count)
    throw std::invalid_argument(std::string(who) + ": state " + std::to_string(state) +
                                " outside the " + std::to_string(cfg.state_count) +
                                "-state space");
  if (action < 0 || action >= cfg.action_count)
    throw std::invalid_argument(std::string(who) + ": action " + std::to_string(action) +
                                " outside the " + std::to_string(cfg.action_count) +
                                "-action space");
}

util::KeyValue mlp_echo(const MlpConfig& cfg) {
  util::KeyValue kv;
  kv.set_int("state_count", cfg.state_count);
  kv.set_int("action_count", cfg.action_count);
  kv.set_int("hidden", cfg.hidden);
  return kv;
}

MlpConfig mlp_from_echo(const util::KeyValue& kv) {
  MlpConfig cfg;
  cfg.state_count = static_cast<int>(kv.get_int("state_count"));
  cfg.action_count = static_cast<int>(kv.get_int("action_count"));
  cfg.hidden = static_cast<int>(kv.get_int("hidden"));
  cfg.validate();
  return cfg;
}

}  // namespace

void MlpConfig::validate() const {
  if (state_count < 1) throw std::invalid_argument("policy config: state_count must be positive");
  if (action_count < 1)
    throw std::invalid_argument("policy config: action_count must be positive");
  if (hidden < 1) throw std::invalid_argument("policy config: hidden must be positive");
}

BcPolicy::BcPolicy(const MlpConfig& cfg, numkit::Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  add_trunk(params_, "", cfg_, rng);
}

BcTrainReport BcPolicy::train(const std::vector<trajdata::Trajectory>& dataset,
                              const BcTrainConfig& tcfg, numkit::Rng& rng) {
  if (tcfg.epochs < 1 || tcfg.batch_size < 1)
    throw std::invalid_argument("bc train: epochs and batch_size must be positive");
  if (tcfg.learning_rate <= 0.0 || tcfg.clip_norm <= 0.0)
    throw std::invalid_argument("bc train: learning_rate and clip_norm must be positive");

  std::vector<int> states, actions;
  for (const auto& traj : dataset)
    for (std::size_t t = 0; t < traj.length(); ++t) {
      check_step(cfg_, traj.states[t], traj.actions[t], "bc train");
      states.push_back(traj.states[t]);
      actions.push_back(traj.actions[t]);
    }
  if (states.empty()) throw std::invalid_argument("bc train: dataset has no state-action pairs");

  numkit::AdamState adam = numkit::AdamState::init(params_);
  numkit::AdamConfig acfg;
  acfg.lr = tcfg.learning_rate;

  BcTrainReport report;
  report.pairs = states.size();
  std::vector<std::size_t> order(states.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(tcfg.batch_size));
      std::vector<int> bs, ba;
      for (std::size_t i = lo; i < hi; ++i) {
        bs.push_back(states[order[i]]);
        ba.push_back(actions[order[i]]);
      }
      numkit::Tape tape;
      Tensor logits = trunk_forward(tape, params_, "", bs);
      Tensor loss = tape.cross_entropy(logits, ba);
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw std::runtime_error("bc train: loss diverged");
      epoch_loss += lv * static_cast<double>(hi - lo);
      params_.zero_grads();
      tape.backward(loss);
      numkit::clip_global_norm(params_, tcfg.clip_norm);
      numkit::adam_step(params_, adam, acfg);
    }
    report.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return report;
}

int BcPolicy::act(int state) const {
  check_step(cfg_, state, 0, "bc act");
  return static_cast<int>(argmax_first(trunk_logits(params_, "", cfg_, state)));
}

std::vector<double> BcPolicy::action_probs(int state) const {
  check_step(cfg_, state, 0, "bc probs");
  return softmax(trunk_logits(params_, "", cfg_, state));
}

void BcPolicy::save(const std::string& path) const {
  ckpt::save(path, "bc-policy", mlp_echo(cfg_), params_);
}

BcPolicy BcPolicy::load(const std::string& path) {
  ckpt::Header header = ckpt::peek(path);
  numkit::Rng dummy(0);
  BcPolicy policy(mlp_from_echo(header.config), dummy);
  ckpt::load_into(path, "bc-policy", policy.params_);
  return policy;
}

BcqPolicy::BcqPolicy(const MlpConfig& cfg, double filter_tau, numkit::Rng& rng)
    : cfg_(cfg), filter_tau_(filter_tau) {
  cfg_.validate();
  if (!(filter_tau_ >= 0.0 && filter_tau_ <= 1.0))
    throw std::invalid_argument("bcq: filter_tau must lie in [0, 1]");
  add_trunk(params_, "q_", cfg_, rng);
  add_trunk(params_, "bc_", cfg_, rng);
}

BcqTrainReport BcqPolicy::train(const envs::GridEnv& env,
                                const std::vector<trajdata::Trajectory>& dataset,
                                const BcqTrainConfig& tcfg, numkit::Rng& rng) {
  if (tcfg.steps < 1 || tcfg.batch_size < 1 || tcfg.target_sync < 1)
    throw std::invalid_argument("bcq train: steps, batch_size, and target_sync must be positive");
  if (tcfg.learning_rate <= 0.0 || tcfg.clip_norm <= 0.0)
    throw std::invalid_argument("bcq train: learning_rate and clip_norm must be positive");
  if (tcfg.discount <= 0.0 || tcfg.discount > 1.0)
    throw std::invalid_argument("bcq train: discount must lie in (0, 1]");

  std::vector<envs::Transition> data;
  for (const auto& traj : dataset) {
    auto trs = envs::extract_transitions(env, traj);
    for (const auto& tr : trs) {
      check_step(cfg_, tr.s, tr.a, "bcq train");
      check_step(cfg_, tr.s_next, 0, "bcq train");
      data.push_back(tr);
    }
  }
  if (data.empty()) throw std::invalid_argument("bcq train: dataset has no transitions");

  numkit::AdamState adam = numkit::AdamState::init(params_);
  numkit::AdamConfig acfg;
  acfg.lr = tcfg.learning_rate;

  // Frozen copy for bootstrap values, refreshed every target_sync steps.
  numkit::ParamStore target;
  {
    numkit::Rng dummy(0);
    add_trunk(target, "q_", cfg_, dummy);
    add_trunk(target, "bc_", cfg_, dummy);
  }

  BcqTrainReport report;
  report.transitions = data.size();
  const std::size_t B = static_cast<std::size_t>(tcfg.batch_size);
  const std::size_t A = static_cast<std::size_t>(cfg_.action_count);
  double window_loss = 0.0;
  int window_count = 0;

  for (int step = 0; step < tcfg.steps; ++step) {
    if (step % tcfg.target_sync == 0) target.set_flat_values(params_.flat_values());

    std::vector<int> bs, ba;
    std::vector<double> mask(B * A, 0.0), targets(B * A, 0.0);
    for (std::size_t i = 0; i < B; ++i) {
      const envs::Transition& tr = data[rng.randint(data.size())];
      bs.push_back(tr.s);
      ba.push_back(tr.a);
      double y = tr.r;
      if (!tr.done) {
        std::vector<double> bc = trunk_logits(params_, "bc_", cfg_, tr.s_next);
        std::vector<double> q_online = trunk_logits(params_, "q_", cfg_, tr.s_next);
        std::vector<double> q_frozen = trunk_logits(target, "q_", cfg_, tr.s_next);
        int best = -1;
        for (int a : filter_actions(bc, filter_tau_))
          if (best < 0 || q_online[static_cast<std::size_t>(a)] >
                              q_online[static_cast<std::size_t>(best)])
            best = a;
        y += tcfg.discount * q_frozen[static_cast<std::size_t>(best)];
      }
      mask[i * A + static_cast<std::size_t>(tr.a)] = 1.0;
      targets[i * A + static_cast<std::size_t>(tr.a)] = y;
    }

    numkit::Tape tape;
    Tensor q = trunk_forward(tape, params_, "q_", bs);
    Tensor diff = tape.sub(tape.mul(q, Tensor::leaf({B, A}, mask)),
                           Tensor::leaf({B, A}, targets));
    Tensor td = tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / static_cast<double>(B));
    Tensor ce = tape.cross_entropy(trunk_forward(tape, params_, "bc_", bs), ba);
    Tensor loss = tape.add(td, ce);
    const double lv = loss.item();
    if (!std::isfinite(lv))
      throw std::runtime_error("bcq train: loss diverged at step " + std::to_string(step));

    params_.zero_grads();
    tape.backward(loss);
    numkit::clip_global_norm(params_, tcfg.clip_norm);
    numkit::adam_step(params_, adam, acfg);

    window_loss += lv;
    if (++window_count == kCurveWindow) {
      report.loss_curve.push_back(window_loss / window_count);
      window_loss = 0.0;
      window_count = 0;
    }
  }
  if (window_count > 0) report.loss_curve.push_back(window_loss / window_count);
  return report;
}

int BcqPolicy::act(int state) const {
  check_step(cfg_, state, 0, "bcq act");
  std::vector<double> q = trunk_logits(params_, "q_", cfg_, state);
  std::vector<double> bc = trunk_logits(params_, "bc_", cfg_, state);
  int best = -1;
  for (int a : filter_actions(bc, filter_tau_))
    if (best < 0 ||
        q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)])
      best = a;
  return best;
}

std::vector<int> BcqPolicy::allowed_actions(int state) const {
  check_step(cfg_, state, 0, "bcq filter");
  return filter_actions(trunk_logits(params_, "bc_", cfg_, state), filter_tau_);
}

std::vector<double> BcqPolicy::q_values(int state) const {
  check_step(cfg_, state, 0, "bcq q");
  return trunk_logits(params_, "q_", cfg_, state);
}

std::vector<double> BcqPolicy::behavioral_probs(int state) const {
  check_step(cfg_, state, 0, "bcq probs");
  return softmax(trunk_logits(params_, "bc_", cfg_, state));
}

void BcqPolicy::save(const std::string& path) const {
  util::KeyValue kv = mlp_echo(cfg_);
  kv.set_double("filter_tau", filter_tau_);
  ckpt::save(path, "bcq-policy", kv, params_);
}

BcqPolicy BcqPolicy::load(const std::string& path) {
  ckpt::Header header = ckpt::peek(path);
  numkit::Rng dummy(0);
  BcqPolicy policy(mlp_from_echo(header.config), header.config.get_double("filter_tau"), dummy);
  ckpt::load_into(path, "bcq-policy", policy.params_);
  return policy;
}

EvalReport evaluate(const envs::GridEnv& env, const Policy& policy, std::size_t episodes,
                    numkit::Rng& rng) {
  EvalReport report;
  report.episodes = episodes;
  report.defined = episodes > 0;
  if (!report.defined) return report;

  for (std::size_t e = 0; e < episodes; ++e) {
    numkit::Rng ep = rng.derive(static_cast<std::uint64_t>(e));
    report.episode_seeds.push_back(ep.seed());
    int s = env.start;
    double ret = 0.0;
    std::size_t len = 0;
    int success = 0;
    for (int t = 0; t < env.step_limit; ++t) {
      const int a = policy(s, ep);
      if (a < 0 || a >= envs::kActionCount)
        throw std::invalid_argument("evaluate: policy produced action " + std::to_string(a));
      envs::Transition tr = envs::step(env, s, a);
      ret += tr.r;
      ++len;
      s = tr.s_next;
      if (tr.done) {
        success = 1;
        break;
      }
    }
    report.returns.push_back(ret);
    report.successes.push_back(success);
    report.lengths.push_back(len);
  }

  double sum_ret = 0.0, sum_succ = 0.0, sum_len = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    sum_ret += report.returns[e];
    sum_succ += report.successes[e];
    sum_len += static_cast<double>(report.lengths[e]);
  }
  const double n = static_cast<double>(episodes);
  report.mean_return = sum_ret / n;
  report.success_rate = sum_succ / n;
  report.mean_length = sum_len / n;
  return report;
}

}  // namespace rtlab::learners
