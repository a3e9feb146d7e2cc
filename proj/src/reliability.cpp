#include "rtlab/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rtlab/checkpoint.hpp"

namespace rtlab::reliability {

using numkit::Tape;
using numkit::Tensor;

namespace {

constexpr double kInitScale = 0.02;
constexpr const char* kCkptKind = "vae";

// y = tanh(x W + b) for a single row, plain arithmetic (no tape).
std::vector<double> affine_row(const std::vector<double>& x, const Tensor& w,
                               const Tensor& b, bool apply_tanh) {
  const std::size_t in = w.rows(), out = w.cols();
  std::vector<double> y(b.values());
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* wr = w.values().data() + i * out;
    for (std::size_t j = 0; j < out; ++j) y[j] += xi * wr[j];
  }
  if (apply_tanh)
    for (auto& v : y) v = std::tanh(v);
  return y;
}

// -log softmax(logits)[target] over one block of a logit row.
double block_nll(const std::vector<double>& logits, std::size_t lo, std::size_t hi,
                 std::size_t target) {
  double m = logits[lo];
  for (std::size_t j = lo + 1; j < hi; ++j) m = std::max(m, logits[j]);
  double z = 0.0;
  for (std::size_t j = lo; j < hi; ++j) z += std::exp(logits[j] - m);
  return std::log(z) - (logits[lo + target] - m);
}

}  // namespace

void VaeConfig::validate() const {
  if (state_count < 1 || action_count < 1)
    throw std::invalid_argument("VaeConfig: state and action counts must be positive");
  if (hidden < 1 || latent < 1)
    throw std::invalid_argument("VaeConfig: hidden and latent sizes must be positive");
}

util::KeyValue VaeConfig::to_key_value() const {
  util::KeyValue kv;
  kv.set_int("state_count", state_count);
  kv.set_int("action_count", action_count);
  kv.set_int("hidden", hidden);
  kv.set_int("latent", latent);
  return kv;
}

VaeConfig VaeConfig::from_key_value(const util::KeyValue& kv) {
  VaeConfig cfg;
  cfg.state_count = static_cast<int>(kv.get_int("state_count"));
  cfg.action_count = static_cast<int>(kv.get_int("action_count"));
  cfg.hidden = static_cast<int>(kv.get_int_or("hidden", cfg.hidden));
  cfg.latent = static_cast<int>(kv.get_int_or("latent", cfg.latent));
  cfg.validate();
  return cfg;
}

Vae::Vae(const VaeConfig& cfg, numkit::Rng& init_rng) : cfg_(cfg) {
  cfg_.validate();
  init_params(init_rng);
}

void Vae::init_params(numkit::Rng& rng) {
  auto normal_leaf = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = rng.normal() * kInitScale;
    params_.add(name, Tensor::leaf({rows, cols}, std::move(v), true));
  };
  auto zero_bias = [&](const std::string& name, std::size_t n) {
    params_.add(name, Tensor::leaf({n}, std::vector<double>(n, 0.0), true));
  };
  const std::size_t in = static_cast<std::size_t>(cfg_.input_dim());
  const std::size_t h = static_cast<std::size_t>(cfg_.hidden);
  const std::size_t z = static_cast<std::size_t>(cfg_.latent);
  normal_leaf("enc_w1", in, h);
  zero_bias("enc_b1", h);
  normal_leaf("enc_w2", h, h);
  zero_bias("enc_b2", h);
  normal_leaf("enc_mu_w", h, z);
  zero_bias("enc_mu_b", z);
  normal_leaf("enc_lv_w", h, z);
  zero_bias("enc_lv_b", z);
  normal_leaf("dec_w1", z, h);
  zero_bias("dec_b1", h);
  normal_leaf("dec_w2", h, h);
  zero_bias("dec_b2", h);
  normal_leaf("dec_out_w", h, in);
  zero_bias("dec_out_b", in);
}

Tensor Vae::loss_graph(Tape& tape, const std::vector<envs::Transition>& batch,
                       const std::vector<double>& noise) const {
  const std::size_t b = batch.size();
  if (b == 0) throw std::invalid_argument("vae loss: empty batch");
  const std::size_t z = static_cast<std::size_t>(cfg_.latent);
  if (noise.size() != b * z)
    throw std::invalid_argument("vae loss: noise must supply batch_size * latent values");
  const std::size_t in = static_cast<std::size_t>(cfg_.input_dim());
  const std::size_t s_count = static_cast<std::size_t>(cfg_.state_count);
  const std::size_t a_count = static_cast<std::size_t>(cfg_.action_count);

  std::vector<double> onehot(b * in, 0.0);
  std::vector<int> target_s(b), target_a(b), target_s2(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& tr = batch[i];
    if (tr.s < 0 || tr.s >= cfg_.state_count || tr.s_next < 0 ||
        tr.s_next >= cfg_.state_count || tr.a < 0 || tr.a >= cfg_.action_count)
      throw std::out_of_range("vae loss: transition outside the configured spaces");
    double* row = onehot.data() + i * in;
    row[static_cast<std::size_t>(tr.s)] = 1.0;
    row[s_count + static_cast<std::size_t>(tr.a)] = 1.0;
    row[s_count + a_count + static_cast<std::size_t>(tr.s_next)] = 1.0;
    target_s[i] = tr.s;
    target_a[i] = tr.a;
    target_s2[i] = tr.s_next;
  }
  Tensor x = Tensor::leaf({b, in}, std::move(onehot));
  Tensor eps = Tensor::leaf({b, z}, noise);

  Tensor h1 = tape.tanh(tape.add_row_bias(tape.matmul(x, params_.get("enc_w1")),
                                          params_.get("enc_b1")));
  Tensor h2 = tape.tanh(tape.add_row_bias(tape.matmul(h1, params_.get("enc_w2")),
                                          params_.get("enc_b2")));
  Tensor mu = tape.add_row_bias(tape.matmul(h2, params_.get("enc_mu_w")),
                                params_.get("enc_mu_b"));
  Tensor logvar = tape.add_row_bias(tape.matmul(h2, params_.get("enc_lv_w")),
                                    params_.get("enc_lv_b"));
  Tensor zs = tape.add(mu, tape.mul(tape.exp(tape.scale(logvar, 0.5)), eps));

  Tensor d1 = tape.tanh(tape.add_row_bias(tape.matmul(zs, params_.get("dec_w1")),
                                          params_.get("dec_b1")));
  Tensor d2 = tape.tanh(tape.add_row_bias(tape.matmul(d1, params_.get("dec_w2")),
                                          params_.get("dec_b2")));
  Tensor logits = tape.add_row_bias(tape.matmul(d2, params_.get("dec_out_w")),
                                    params_.get("dec_out_b"));

  Tensor recon = tape.add(
      tape.add(tape.cross_entropy(tape.slice_cols(logits, 0, s_count), target_s),
               tape.cross_entropy(tape.slice_cols(logits, s_count, s_count + a_count),
                                  target_a)),
      tape.cross_entropy(tape.slice_cols(logits, s_count + a_count, in), target_s2));
  Tensor kl = tape.scale(tape.kl_diag_gaussian(mu, logvar), 1.0 / static_cast<double>(b));
  return tape.add(recon, kl);
}

VaeTrainReport Vae::train(const std::vector<envs::Transition>& transitions,
                          const VaeTrainConfig& tcfg, numkit::Rng& rng) {
  if (transitions.size() < 100)
    throw std::invalid_argument("vae train: needs at least 100 transitions, got " +
                                std::to_string(transitions.size()));
  if (tcfg.epochs < 1 || tcfg.batch_size < 1)
    throw std::invalid_argument("vae train: epochs and batch_size must be positive");

  numkit::AdamConfig adam_cfg;
  adam_cfg.lr = tcfg.learning_rate;
  numkit::AdamState adam = numkit::AdamState::init(params_);

  std::vector<std::size_t> order(transitions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  VaeTrainReport report;
  Tape tape;
  const std::size_t z = static_cast<std::size_t>(cfg_.latent);
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.randint(i)]);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
      std::vector<envs::Transition> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(transitions[order[i]]);
      std::vector<double> noise(batch.size() * z);
      for (auto& n : noise) n = rng.normal();
      Tensor loss = loss_graph(tape, batch, noise);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw std::runtime_error("vae train: loss diverged to a non-finite value");
      tape.backward(loss);
      numkit::clip_global_norm(params_, tcfg.clip_norm);
      numkit::adam_step(params_, adam, adam_cfg);
      params_.zero_grads();
      tape.reset();
      loss_sum += value;
      ++batches;
    }
    report.loss_curve.push_back(loss_sum / static_cast<double>(batches));
  }
  return report;
}

double Vae::recon_error(int s, int a, int s_next) const {
  if (s < 0 || s >= cfg_.state_count || s_next < 0 || s_next >= cfg_.state_count ||
      a < 0 || a >= cfg_.action_count)
    throw std::out_of_range("recon_error: transition outside the configured spaces");
  const std::size_t in = static_cast<std::size_t>(cfg_.input_dim());
  const std::size_t s_count = static_cast<std::size_t>(cfg_.state_count);
  const std::size_t a_count = static_cast<std::size_t>(cfg_.action_count);
  std::vector<double> x(in, 0.0);
  x[static_cast<std::size_t>(s)] = 1.0;
  x[s_count + static_cast<std::size_t>(a)] = 1.0;
  x[s_count + a_count + static_cast<std::size_t>(s_next)] = 1.0;

  std::vector<double> h1 = affine_row(x, params_.get("enc_w1"), params_.get("enc_b1"), true);
  std::vector<double> h2 = affine_row(h1, params_.get("enc_w2"), params_.get("enc_b2"), true);
  std::vector<double> mu =
      affine_row(h2, params_.get("enc_mu_w"), params_.get("enc_mu_b"), false);
  std::vector<double> d1 = affine_row(mu, params_.get("dec_w1"), params_.get("dec_b1"), true);
  std::vector<double> d2 = affine_row(d1, params_.get("dec_w2"), params_.get("dec_b2"), true);
  std::vector<double> logits =
      affine_row(d2, params_.get("dec_out_w"), params_.get("dec_out_b"), false);

  return block_nll(logits, 0, s_count, static_cast<std::size_t>(s)) +
         block_nll(logits, s_count, s_count + a_count, static_cast<std::size_t>(a)) +
         block_nll(logits, s_count + a_count, in, static_cast<std::size_t>(s_next));
}

void Vae::save(const std::string& path) const {
  ckpt::save(path, kCkptKind, cfg_.to_key_value(), params_);
}

Vae Vae::load(const std::string& path) {
  ckpt::Header header = ckpt::peek(path);
  if (header.kind != kCkptKind)
    throw std::runtime_error("vae load: checkpoint kind '" + header.kind +
                             "' is not a transition scorer");
  VaeConfig cfg = VaeConfig::from_key_value(header.config);
  numkit::Rng init_rng(0);
  Vae vae(cfg, init_rng);
  ckpt::load_into(path, kCkptKind, vae.params_);
  return vae;
}

std::uint64_t transitions_digest(const std::vector<envs::Transition>& transitions) {
  std::string text;
  text.reserve(transitions.size() * 12);
  for (const auto& t : transitions) {
    text += std::to_string(t.s);
    text += ' ';
    text += std::to_string(t.a);
    text += ' ';
    text += std::to_string(t.s_next);
    text += '\n';
  }
  return util::fnv1a64(text);
}

Threshold calibrate_alpha(const Vae& vae, const std::vector<envs::Transition>& transitions,
                          double percentile) {
  if (transitions.empty())
    throw std::invalid_argument("calibrate_alpha: empty calibration set");
  if (percentile < 0.0 || percentile > 100.0)
    throw std::invalid_argument("calibrate_alpha: percentile must be in [0,100]");
  std::vector<double> scores;
  scores.reserve(transitions.size());
  for (const auto& t : transitions) scores.push_back(vae.recon_error(t.s, t.a, t.s_next));
  std::sort(scores.begin(), scores.end());
  // Nearest-rank: the smallest score with at least p% of the mass at or
  // below it; 0 maps to the minimum.
  std::size_t rank = 0;
  if (percentile > 0.0) {
    const double exact = percentile / 100.0 * static_cast<double>(scores.size());
    rank = static_cast<std::size_t>(std::ceil(exact - 1e-12)) - 1;
    rank = std::min(rank, scores.size() - 1);
  }
  Threshold t;
  t.alpha = scores[rank];
  t.percentile = percentile;
  t.dataset_digest = util::hex64(transitions_digest(transitions));
  return t;
}

void save_threshold(const Threshold& t, const std::string& path) {
  util::KeyValue kv;
  kv.set_double("alpha", t.alpha);
  kv.set_double("percentile", t.percentile);
  kv.set("dataset_digest", t.dataset_digest);
  util::write_file(path, kv.serialize());
}

Threshold load_threshold(const std::string& path) {
  util::KeyValue kv = util::KeyValue::load(path);
  Threshold t;
  t.alpha = kv.get_double("alpha");
  t.percentile = kv.get_double("percentile");
  t.dataset_digest = kv.get_or("dataset_digest", "");
  return t;
}

std::string gamma_mode_name(GammaMode m) {
  return m == GammaMode::weighted ? "weighted" : "sum";
}

GammaMode gamma_mode_from_name(const std::string& s) {
  if (s == "weighted") return GammaMode::weighted;
  if (s == "sum") return GammaMode::sum;
  throw std::invalid_argument("unknown gamma mode '" + s + "'");
}

ReliabilityTrace make_trace(GammaMode mode, double alpha) {
  ReliabilityTrace trace;
  trace.mode = mode;
  trace.alpha = alpha;
  return trace;
}

void gamma_update(ReliabilityTrace& trace, double e_new, double d_new) {
  if (trace.truncated())
    throw std::logic_error("gamma_update: trace is already truncated");
  if (d_new < 0.0) throw std::invalid_argument("gamma_update: distance must be >= 0");
  trace.e.push_back(e_new);
  trace.d.push_back(d_new);

  double gamma = 0.0;
  std::vector<double> weights;
  if (trace.mode == GammaMode::weighted) {
    double m = trace.e[0];
    for (double v : trace.e) m = std::max(m, v);
    double z = 0.0;
    weights.reserve(trace.e.size());
    for (double v : trace.e) {
      weights.push_back(std::exp(v - m));
      z += weights.back();
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
      weights[i] /= z;
      gamma += weights[i] * trace.d[i];
    }
  } else {
    for (double v : trace.d) gamma += v;
  }
  trace.gamma.push_back(gamma);
  trace.weights.push_back(std::move(weights));
  trace.u.push_back(gamma > trace.alpha ? 1 : 0);
}

trajdata::Trajectory pessimistic_relabel(const trajdata::Trajectory& traj,
                                         const ReliabilityTrace& trace, double alpha,
                                         double beta, double discount) {
  if (!traj.consistent()) throw std::invalid_argument("relabel: inconsistent trajectory");
  if (!traj.splice_index.has_value())
    throw std::invalid_argument("relabel: trajectory has no splice point");
  const std::size_t splice = *traj.splice_index;
  if (splice > traj.length())
    throw std::invalid_argument("relabel: splice point beyond trajectory end");
  if (trace.length() != splice)
    throw std::invalid_argument("relabel: trace covers " + std::to_string(trace.length()) +
                                " steps but " + std::to_string(splice) + " were generated");
  if (alpha <= 0.0) throw std::invalid_argument("relabel: alpha must be positive");
  if (beta < 0.0) throw std::invalid_argument("relabel: beta must be >= 0");

  trajdata::Trajectory out = traj;
  bool drop_first = false;
  for (std::size_t i = 0; i < trace.length(); ++i) {
    const std::size_t j = splice - 1 - i;  // generation order to forward time
    if (trace.u[i] == 1) {
      // Truncation only happens at the generation frontier, the earliest
      // forward-time step.
      if (i + 1 != trace.length() || j != 0)
        throw std::logic_error("relabel: truncation away from the trace end");
      drop_first = true;
    } else {
      out.rewards[j] -= beta * trace.gamma[i] / alpha;
    }
  }
  if (drop_first) {
    out.states.erase(out.states.begin());
    out.actions.erase(out.actions.begin());
    out.rewards.erase(out.rewards.begin());
    out.rtgs.erase(out.rtgs.begin());
    out.splice_index = splice - 1;
  }
  trajdata::recompute_rtgs(out, discount);
  return out;
}

}  // namespace rtlab::reliability
