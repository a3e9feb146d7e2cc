#include "rtlab/rtmodel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rtlab/checkpoint.hpp"

namespace rtlab::rtmodel {

using numkit::Tape;
using numkit::Tensor;

namespace {

constexpr double kInitScale = 0.02;
constexpr double kGreedyTemperature = 1e-9;
constexpr const char* kCkptKind = "rtmodel";

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double log_sigmoid(double x) { return -softplus(-x); }

std::size_t argmax_first(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

int sample_categorical(const std::vector<double>& probs, numkit::Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

int sample_from_logits(const std::vector<double>& logits, double temperature,
                       numkit::Rng& rng) {
  if (temperature < kGreedyTemperature) return static_cast<int>(argmax_first(logits));
  const double m = logits[argmax_first(logits)];
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((logits[i] - m) / temperature);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return sample_categorical(p, rng);
}

}  // namespace

void RtConfig::validate() const {
  if (layers < 1 || heads < 1 || model_dim < 1 || context_steps < 1)
    throw std::invalid_argument("RtConfig: sizes must be positive");
  if (model_dim % heads != 0)
    throw std::invalid_argument("RtConfig: model_dim must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("RtConfig: dropout must be in [0,1)");
  if (high_reward_quantile <= 0.0 || high_reward_quantile > 1.0)
    throw std::invalid_argument("RtConfig: high_reward_quantile must be in (0,1]");
  if (guidance_strength < 0.0)
    throw std::invalid_argument("RtConfig: guidance_strength must be >= 0");
  if (temperature < 0.0)
    throw std::invalid_argument("RtConfig: temperature must be >= 0");
}

util::KeyValue RtConfig::to_key_value() const {
  util::KeyValue kv;
  kv.set_int("layers", layers);
  kv.set_int("heads", heads);
  kv.set_int("model_dim", model_dim);
  kv.set_int("context_steps", context_steps);
  kv.set_double("dropout", dropout);
  kv.set("direction", trajdata::direction_name(direction));
  kv.set_double("high_reward_quantile", high_reward_quantile);
  kv.set_double("guidance_strength", guidance_strength);
  kv.set_double("temperature", temperature);
  return kv;
}

RtConfig RtConfig::from_key_value(const util::KeyValue& kv) {
  RtConfig cfg;
  cfg.layers = static_cast<int>(kv.get_int_or("layers", cfg.layers));
  cfg.heads = static_cast<int>(kv.get_int_or("heads", cfg.heads));
  cfg.model_dim = static_cast<int>(kv.get_int_or("model_dim", cfg.model_dim));
  cfg.context_steps = static_cast<int>(kv.get_int_or("context_steps", cfg.context_steps));
  cfg.dropout = kv.get_double_or("dropout", cfg.dropout);
  cfg.direction = trajdata::direction_from_name(
      kv.get_or("direction", trajdata::direction_name(cfg.direction)));
  cfg.high_reward_quantile =
      kv.get_double_or("high_reward_quantile", cfg.high_reward_quantile);
  cfg.guidance_strength = kv.get_double_or("guidance_strength", cfg.guidance_strength);
  cfg.temperature = kv.get_double_or("temperature", cfg.temperature);
  cfg.validate();
  return cfg;
}

RtModel::RtModel(const RtConfig& cfg, const trajdata::Vocab& vocab, numkit::Rng& init_rng)
    : cfg_(cfg), vocab_(vocab) {
  cfg_.validate();
  if (vocab_.state_count < 1 || vocab_.action_count < 1 || vocab_.rewards.empty() ||
      vocab_.rtg_bins() < 1)
    throw std::invalid_argument("RtModel: vocabulary has an empty slot");
  init_params(init_rng);
}

void RtModel::init_params(numkit::Rng& rng) {
  const std::size_t d = static_cast<std::size_t>(cfg_.model_dim);
  auto normal_leaf = [&](const std::string& name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * kInitScale;
    params_.add(name, Tensor::leaf(std::move(shape), std::move(v), true));
  };
  auto const_leaf = [&](const std::string& name, std::vector<std::size_t> shape,
                        double fill) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    params_.add(name, Tensor::leaf(std::move(shape), std::vector<double>(n, fill), true));
  };

  // Fused token table: row 0 is the sequence-start marker, then one block
  // per slot type in (state, action, reward, rtg) order.
  const std::size_t vocab_rows = 1 + static_cast<std::size_t>(vocab_.state_count) +
                                 static_cast<std::size_t>(vocab_.action_count) +
                                 vocab_.rewards.size() +
                                 static_cast<std::size_t>(vocab_.rtg_bins());
  normal_leaf("token_embedding", {vocab_rows, d});
  normal_leaf("position_embedding", {1 + static_cast<std::size_t>(cfg_.context_steps), d});
  normal_leaf("slot_embedding", {1 + static_cast<std::size_t>(trajdata::kSlotsPerStep), d});

  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const_leaf(p + "ln1_gain", {d}, 1.0);
    const_leaf(p + "ln1_bias", {d}, 0.0);
    normal_leaf(p + "attn_wq", {d, d});
    const_leaf(p + "attn_bq", {d}, 0.0);
    normal_leaf(p + "attn_wk", {d, d});
    const_leaf(p + "attn_bk", {d}, 0.0);
    normal_leaf(p + "attn_wv", {d, d});
    const_leaf(p + "attn_bv", {d}, 0.0);
    normal_leaf(p + "attn_wo", {d, d});
    const_leaf(p + "attn_bo", {d}, 0.0);
    const_leaf(p + "ln2_gain", {d}, 1.0);
    const_leaf(p + "ln2_bias", {d}, 0.0);
    normal_leaf(p + "mlp_w1", {d, 4 * d});
    const_leaf(p + "mlp_b1", {4 * d}, 0.0);
    normal_leaf(p + "mlp_w2", {4 * d, d});
    const_leaf(p + "mlp_b2", {d}, 0.0);
  }
  const_leaf("ln_f_gain", {d}, 1.0);
  const_leaf("ln_f_bias", {d}, 0.0);

  const std::size_t head_sizes[4] = {static_cast<std::size_t>(vocab_.state_count),
                                     static_cast<std::size_t>(vocab_.action_count),
                                     vocab_.rewards.size(),
                                     static_cast<std::size_t>(vocab_.rtg_bins())};
  const char* head_names[4] = {"head_state", "head_action", "head_reward", "head_rtg"};
  for (int k = 0; k < 4; ++k) {
    normal_leaf(std::string(head_names[k]) + "_w", {d, head_sizes[k]});
    const_leaf(std::string(head_names[k]) + "_b", {head_sizes[k]}, 0.0);
  }
  normal_leaf("head_rtg_marginal_w", {d, static_cast<std::size_t>(vocab_.rtg_bins())});
  const_leaf("head_rtg_marginal_b", {static_cast<std::size_t>(vocab_.rtg_bins())}, 0.0);
  normal_leaf("head_classifier_w", {d, static_cast<std::size_t>(vocab_.rtg_bins())});
  const_leaf("head_classifier_b", {static_cast<std::size_t>(vocab_.rtg_bins())}, 0.0);
}

RtModel::TrunkOut RtModel::trunk(Tape& tape, const std::vector<int>& tokens,
                                 bool train_mode, numkit::Rng* rng) const {
  const std::size_t m = tokens.size();
  if ((m + 3) / 4 > static_cast<std::size_t>(cfg_.context_steps))
    throw std::invalid_argument("rtmodel: sequence of " + std::to_string((m + 3) / 4) +
                                " steps exceeds context of " +
                                std::to_string(cfg_.context_steps));
  const int offsets[4] = {0, vocab_.state_count, vocab_.state_count + vocab_.action_count,
                          vocab_.state_count + vocab_.action_count +
                              static_cast<int>(vocab_.rewards.size())};
  std::vector<int> tok_ids(m + 1), pos_ids(m + 1), slot_ids(m + 1);
  tok_ids[0] = pos_ids[0] = slot_ids[0] = 0;  // start marker row
  for (std::size_t p = 0; p < m; ++p) {
    const int slot = static_cast<int>(p % 4);
    const int tok = tokens[p];
    if (tok < 0 || tok >= vocab_.slot_size(slot))
      throw std::out_of_range("rtmodel: token " + std::to_string(tok) +
                              " out of range for its slot");
    tok_ids[p + 1] = 1 + offsets[slot] + tok;
    pos_ids[p + 1] = 1 + static_cast<int>(p / 4);
    slot_ids[p + 1] = 1 + slot;
  }

  const bool drop = train_mode && cfg_.dropout > 0.0;
  if (drop && rng == nullptr)
    throw std::invalid_argument("rtmodel: dropout requires an rng in train mode");

  Tensor x = tape.add(tape.add(tape.embedding_rows(params_.get("token_embedding"), tok_ids),
                               tape.embedding_rows(params_.get("position_embedding"), pos_ids)),
                      tape.embedding_rows(params_.get("slot_embedding"), slot_ids));
  if (drop) x = tape.dropout(x, cfg_.dropout, *rng);

  const std::size_t d = static_cast<std::size_t>(cfg_.model_dim);
  const std::size_t hd = d / static_cast<std::size_t>(cfg_.heads);
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> last_attention;

  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Tensor h = tape.layer_norm(x, params_.get(p + "ln1_gain"), params_.get(p + "ln1_bias"));
    Tensor q = tape.add_row_bias(tape.matmul(h, params_.get(p + "attn_wq")),
                                 params_.get(p + "attn_bq"));
    Tensor k = tape.add_row_bias(tape.matmul(h, params_.get(p + "attn_wk")),
                                 params_.get(p + "attn_bk"));
    Tensor v = tape.add_row_bias(tape.matmul(h, params_.get(p + "attn_wv")),
                                 params_.get(p + "attn_bv"));
    std::vector<Tensor> head_outs;
    std::vector<Tensor> attn_weights;
    for (int hh = 0; hh < cfg_.heads; ++hh) {
      const std::size_t c0 = static_cast<std::size_t>(hh) * hd, c1 = c0 + hd;
      Tensor qh = tape.slice_cols(q, c0, c1);
      Tensor kh = tape.slice_cols(k, c0, c1);
      Tensor vh = tape.slice_cols(v, c0, c1);
      Tensor scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_hd);
      Tensor w = tape.softmax_causal(scores);
      attn_weights.push_back(w);
      head_outs.push_back(tape.matmul(w, vh));
    }
    Tensor attn = tape.add_row_bias(
        tape.matmul(tape.concat_cols(head_outs), params_.get(p + "attn_wo")),
        params_.get(p + "attn_bo"));
    if (drop) attn = tape.dropout(attn, cfg_.dropout, *rng);
    x = tape.add(x, attn);

    Tensor h2 = tape.layer_norm(x, params_.get(p + "ln2_gain"), params_.get(p + "ln2_bias"));
    Tensor mid = tape.gelu(tape.add_row_bias(tape.matmul(h2, params_.get(p + "mlp_w1")),
                                             params_.get(p + "mlp_b1")));
    Tensor out = tape.add_row_bias(tape.matmul(mid, params_.get(p + "mlp_w2")),
                                   params_.get(p + "mlp_b2"));
    if (drop) out = tape.dropout(out, cfg_.dropout, *rng);
    x = tape.add(x, out);
    if (l == cfg_.layers - 1) last_attention = std::move(attn_weights);
  }

  TrunkOut t;
  t.hidden = tape.layer_norm(x, params_.get("ln_f_gain"), params_.get("ln_f_bias"));
  t.last_attention = std::move(last_attention);
  return t;
}

ForwardGraph RtModel::forward(Tape& tape, const trajdata::TokenSequence& seq,
                              bool train_mode, numkit::Rng* rng) const {
  if (seq.direction != cfg_.direction)
    throw std::invalid_argument("rtmodel: sequence direction does not match the model");
  if (seq.step_count == 0) throw std::invalid_argument("rtmodel: empty sequence");
  if (seq.tokens.size() != trajdata::kSlotsPerStep * seq.step_count)
    throw std::invalid_argument("rtmodel: token count does not match step count");

  TrunkOut t = trunk(tape, seq.tokens, train_mode, rng);
  const int steps = static_cast<int>(seq.step_count);

  ForwardGraph g;
  g.hidden = t.hidden;
  g.last_attention = std::move(t.last_attention);
  for (int k = 0; k < 4; ++k) {
    std::vector<int> rows(static_cast<std::size_t>(steps));
    auto& targets = g.slot_targets[static_cast<std::size_t>(k)];
    targets.resize(static_cast<std::size_t>(steps));
    for (int s = 0; s < steps; ++s) {
      rows[static_cast<std::size_t>(s)] = 4 * s + k;
      targets[static_cast<std::size_t>(s)] =
          seq.tokens[static_cast<std::size_t>(4 * s + k)];
    }
    const char* names[4] = {"head_state", "head_action", "head_reward", "head_rtg"};
    Tensor gathered = tape.gather_rows(t.hidden, rows);
    g.slot_logits[static_cast<std::size_t>(k)] = tape.add_row_bias(
        tape.matmul(gathered, params_.get(std::string(names[k]) + "_w")),
        params_.get(std::string(names[k]) + "_b"));
  }
  std::vector<int> boundary_rows(static_cast<std::size_t>(steps));
  g.rtg_targets.resize(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    boundary_rows[static_cast<std::size_t>(s)] = 4 * s;
    g.rtg_targets[static_cast<std::size_t>(s)] =
        seq.tokens[static_cast<std::size_t>(4 * s + 3)];
  }
  Tensor boundary = tape.gather_rows(t.hidden, boundary_rows);
  g.marginal_rtg_logits =
      tape.add_row_bias(tape.matmul(boundary, params_.get("head_rtg_marginal_w")),
                        params_.get("head_rtg_marginal_b"));
  g.classifier_logits =
      tape.add_row_bias(tape.matmul(boundary, params_.get("head_classifier_w")),
                        params_.get("head_classifier_b"));
  return g;
}

RtModel::LossParts RtModel::loss(Tape& tape, const ForwardGraph& graph,
                                 double high_return_label) const {
  Tensor core = tape.add(
      tape.add(tape.cross_entropy(graph.slot_logits[0], graph.slot_targets[0]),
               tape.cross_entropy(graph.slot_logits[1], graph.slot_targets[1])),
      tape.add(tape.cross_entropy(graph.slot_logits[2], graph.slot_targets[2]),
               tape.cross_entropy(graph.slot_logits[3], graph.slot_targets[3])));
  Tensor marginal = tape.cross_entropy(graph.marginal_rtg_logits, graph.rtg_targets);
  Tensor clf = tape.bce_logits_select(
      graph.classifier_logits, graph.rtg_targets,
      std::vector<double>(graph.rtg_targets.size(), high_return_label));
  Tensor total = tape.add(core, tape.add(marginal, tape.scale(clf, 0.1)));
  LossParts parts;
  parts.core = core;
  parts.total = total;
  parts.core_value = core.item();
  parts.total_value = total.item();
  return parts;
}

double RtModel::high_return_threshold(const std::vector<trajdata::Trajectory>& dataset,
                                      double quantile) {
  if (dataset.empty()) throw std::invalid_argument("high_return_threshold: empty dataset");
  std::vector<double> returns;
  returns.reserve(dataset.size());
  for (const auto& t : dataset) returns.push_back(trajdata::trajectory_return(t));
  std::sort(returns.begin(), returns.end(), std::greater<double>());
  // Top-q fraction, at least one trajectory; ties at the threshold are all
  // counted positive.
  const std::size_t k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(quantile * static_cast<double>(returns.size()) +
                                             1e-12)));
  return returns[std::min(k, returns.size()) - 1];
}

TrainReport RtModel::train(const std::vector<trajdata::Trajectory>& dataset,
                           const TrainConfig& tcfg, numkit::Rng& rng) {
  if (dataset.empty()) throw std::invalid_argument("rtmodel train: empty dataset");
  if (tcfg.epochs < 1) throw std::invalid_argument("rtmodel train: epochs must be >= 1");
  if (tcfg.val_fraction < 0.0 || tcfg.val_fraction >= 1.0)
    throw std::invalid_argument("rtmodel train: val_fraction must be in [0,1)");

  for (const auto& traj : dataset)
    if (traj.length() > static_cast<std::size_t>(cfg_.context_steps))
      throw std::invalid_argument(
          "rtmodel train: trajectory of " + std::to_string(traj.length()) +
          " steps exceeds context_steps " + std::to_string(cfg_.context_steps));

  TrainReport report;
  std::vector<trajdata::TokenSequence> seqs;
  seqs.reserve(dataset.size());
  for (const auto& traj : dataset)
    seqs.push_back(tokenize(traj, vocab_, cfg_.direction, &report.rtg_clamp_warnings));

  const double threshold = high_return_threshold(dataset, cfg_.high_reward_quantile);
  std::vector<double> labels(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    labels[i] = trajdata::trajectory_return(dataset[i]) >= threshold ? 1.0 : 0.0;

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.randint(i)]);
  const std::size_t val_count =
      static_cast<std::size_t>(tcfg.val_fraction * static_cast<double>(order.size()));
  std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(val_count),
                                   order.end());
  std::vector<std::size_t> train_idx(order.begin(),
                                     order.end() - static_cast<std::ptrdiff_t>(val_count));
  if (train_idx.empty()) throw std::invalid_argument("rtmodel train: empty training split");
  report.train_count = train_idx.size();
  report.val_count = val_idx.size();

  numkit::AdamConfig adam_cfg;
  adam_cfg.lr = tcfg.learning_rate;
  numkit::AdamState adam = numkit::AdamState::init(params_);

  Tape tape;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    for (std::size_t i = train_idx.size(); i > 1; --i)
      std::swap(train_idx[i - 1], train_idx[rng.randint(i)]);
    double core_sum = 0.0, total_sum = 0.0;
    for (std::size_t idx : train_idx) {
      ForwardGraph graph = forward(tape, seqs[idx], true, &rng);
      LossParts parts = loss(tape, graph, labels[idx]);
      if (!std::isfinite(parts.total_value))
        throw std::runtime_error("rtmodel train: loss diverged to a non-finite value");
      tape.backward(parts.total);
      numkit::clip_global_norm(params_, tcfg.clip_norm);
      numkit::adam_step(params_, adam, adam_cfg);
      params_.zero_grads();
      tape.reset();
      core_sum += parts.core_value;
      total_sum += parts.total_value;
    }
    report.loss_curve.push_back(core_sum / static_cast<double>(train_idx.size()));
    report.total_loss_curve.push_back(total_sum / static_cast<double>(train_idx.size()));
  }

  // Held-out accuracy; with no held-out split the training set stands in.
  const std::vector<std::size_t>& acc_idx = val_idx.empty() ? train_idx : val_idx;
  std::array<std::size_t, 4> hits{}, totals{};
  for (std::size_t idx : acc_idx) {
    ForwardGraph graph = forward(tape, seqs[idx], false, nullptr);
    for (int k = 0; k < 4; ++k) {
      const auto& logits = graph.slot_logits[static_cast<std::size_t>(k)];
      const auto& targets = graph.slot_targets[static_cast<std::size_t>(k)];
      const std::size_t v = logits.cols();
      for (std::size_t row = 0; row < targets.size(); ++row) {
        const double* lr = logits.values().data() + row * v;
        std::size_t best = 0;
        for (std::size_t j = 1; j < v; ++j)
          if (lr[j] > lr[best]) best = j;
        hits[static_cast<std::size_t>(k)] +=
            (static_cast<int>(best) == targets[row]) ? 1 : 0;
        ++totals[static_cast<std::size_t>(k)];
      }
    }
    tape.reset();
  }
  for (int k = 0; k < 4; ++k)
    report.val_slot_accuracy[static_cast<std::size_t>(k)] =
        totals[static_cast<std::size_t>(k)] == 0
            ? 0.0
            : static_cast<double>(hits[static_cast<std::size_t>(k)]) /
                  static_cast<double>(totals[static_cast<std::size_t>(k)]);
  report.val_action_accuracy = report.val_slot_accuracy[trajdata::kSlotAction];
  return report;
}

std::vector<double> RtModel::head_logits(const std::vector<double>& row, const char* weight,
                                         const char* bias) const {
  const Tensor& w = params_.get(weight);
  const Tensor& b = params_.get(bias);
  const std::size_t d = w.rows(), v = w.cols();
  std::vector<double> out(b.values());
  for (std::size_t i = 0; i < d; ++i) {
    const double x = row[i];
    const double* wr = w.values().data() + i * v;
    for (std::size_t j = 0; j < v; ++j) out[j] += x * wr[j];
  }
  return out;
}

RtModel::FrontierOut RtModel::frontier(const std::vector<int>& tokens,
                                       bool want_attention_row) const {
  Tape tape;
  TrunkOut t = trunk(tape, tokens, false, nullptr);
  FrontierOut out;
  const std::size_t n = t.hidden.rows();
  const std::size_t d = t.hidden.cols();
  out.hidden_last.assign(t.hidden.values().begin() + (n - 1) * d,
                         t.hidden.values().begin() + n * d);
  if (want_attention_row) {
    // Head-mean of the last row's causal weights, then summed per step
    // group; the start-marker mass is dropped.
    const std::size_t groups = (tokens.size() + 3) / 4;
    out.attention_row.assign(groups, 0.0);
    const double inv_heads = 1.0 / static_cast<double>(t.last_attention.size());
    for (const auto& w : t.last_attention) {
      const double* row = w.values().data() + (n - 1) * n;
      for (std::size_t p = 0; p + 1 < n; ++p)
        out.attention_row[p / 4] += inv_heads * row[p + 1];
    }
  }
  return out;
}

BoundaryReadout RtModel::boundary_readout(const std::vector<int>& prefix_tokens) const {
  if (prefix_tokens.empty() || prefix_tokens.size() % 4 != 0)
    throw std::invalid_argument("boundary_readout: prefix must be whole non-empty steps");
  FrontierOut f = frontier(prefix_tokens, false);
  BoundaryReadout r;
  r.marginal_logits = head_logits(f.hidden_last, "head_rtg_marginal_w", "head_rtg_marginal_b");
  r.classifier_logits = head_logits(f.hidden_last, "head_classifier_w", "head_classifier_b");
  return r;
}

std::vector<double> RtModel::guided_rtg_distribution(const BoundaryReadout& readout,
                                                     double lambda, double temperature,
                                                     GuidanceCounters* counters) {
  const std::size_t v = readout.marginal_logits.size();
  if (v == 0 || readout.classifier_logits.size() != v)
    throw std::invalid_argument("guided_rtg_distribution: malformed readout");
  std::vector<double> scores(readout.marginal_logits);
  if (lambda != 0.0)
    for (std::size_t j = 0; j < v; ++j)
      scores[j] += lambda * log_sigmoid(readout.classifier_logits[j]);
  double m = scores[argmax_first(scores)];
  if (!std::isfinite(m)) {
    if (counters) ++counters->fallbacks;
    scores = readout.marginal_logits;
    m = scores[argmax_first(scores)];
  }
  std::vector<double> probs(v, 0.0);
  if (temperature < kGreedyTemperature) {
    probs[argmax_first(scores)] = 1.0;
    return probs;
  }
  double z = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    probs[j] = std::exp((scores[j] - m) / temperature);
    z += probs[j];
  }
  for (auto& p : probs) p /= z;
  return probs;
}

RtModel::StepSample RtModel::guided_sample_step(const std::vector<int>& prefix_tokens,
                                                numkit::Rng& rng,
                                                const SampleOverrides& overrides,
                                                GuidanceCounters* counters) const {
  if (prefix_tokens.empty() || prefix_tokens.size() % 4 != 0)
    throw std::invalid_argument("guided_sample_step: prefix must be whole non-empty steps");
  if (prefix_tokens.size() / 4 >= static_cast<std::size_t>(cfg_.context_steps))
    throw std::invalid_argument("guided_sample_step: no context room for another step");

  StepSample sample;
  FrontierOut boundary = frontier(prefix_tokens, false);
  BoundaryReadout readout;
  readout.marginal_logits =
      head_logits(boundary.hidden_last, "head_rtg_marginal_w", "head_rtg_marginal_b");
  readout.classifier_logits =
      head_logits(boundary.hidden_last, "head_classifier_w", "head_classifier_b");
  const std::vector<double> rtg_probs = guided_rtg_distribution(
      readout, overrides.guidance_strength, overrides.temperature, counters);
  sample.tokens[trajdata::kSlotRtg] = sample_categorical(rtg_probs, rng);
  sample.tokens[trajdata::kSlotState] =
      sample_from_logits(head_logits(boundary.hidden_last, "head_state_w", "head_state_b"),
                         overrides.temperature, rng);

  std::vector<int> with_state = prefix_tokens;
  with_state.push_back(sample.tokens[trajdata::kSlotState]);
  FrontierOut after_state = frontier(with_state, true);
  sample.attention = std::move(after_state.attention_row);
  sample.tokens[trajdata::kSlotAction] = sample_from_logits(
      head_logits(after_state.hidden_last, "head_action_w", "head_action_b"),
      overrides.temperature, rng);

  with_state.push_back(sample.tokens[trajdata::kSlotAction]);
  FrontierOut after_action = frontier(with_state, false);
  sample.tokens[trajdata::kSlotReward] = sample_from_logits(
      head_logits(after_action.hidden_last, "head_reward_w", "head_reward_b"),
      overrides.temperature, rng);
  return sample;
}

Generation RtModel::generate(const trajdata::Trajectory& seed, std::size_t max_steps,
                             numkit::Rng& rng, const StepGate& gate,
                             const SampleOverrides& overrides,
                             GuidanceCounters* counters) const {
  if (seed.length() == 0) throw std::invalid_argument("generate: empty seed trajectory");
  std::uint64_t* clamp = counters ? &counters->rtg_clamps : nullptr;
  trajdata::TokenSequence seq = tokenize(seed, vocab_, cfg_.direction, clamp);

  Generation gen;
  std::vector<int> tokens = seq.tokens;
  std::size_t groups = seq.step_count;
  for (std::size_t k = 0; k < max_steps; ++k) {
    if (groups >= static_cast<std::size_t>(cfg_.context_steps)) {
      gen.hit_context_limit = true;
      break;
    }
    StepSample s = guided_sample_step(tokens, rng, overrides, counters);
    for (int tok : s.tokens) tokens.push_back(tok);
    ++groups;
    GenStep step;
    step.state = s.tokens[trajdata::kSlotState];
    step.action = s.tokens[trajdata::kSlotAction];
    step.reward = vocab_.decode_reward(s.tokens[trajdata::kSlotReward]);
    step.rtg = vocab_.decode_rtg(s.tokens[trajdata::kSlotRtg]);
    step.attention = std::move(s.attention);
    gen.steps.push_back(std::move(step));
    if (gate && gate(gen.steps.back())) {
      gen.truncated_by_gate = true;
      break;
    }
  }
  return gen;
}

trajdata::Trajectory generation_to_trajectory(const Generation& gen,
                                              trajdata::Direction direction) {
  trajdata::Trajectory traj;
  traj.provenance = trajdata::Provenance::generated;
  const std::size_t n = gen.steps.size();
  for (std::size_t i = 0; i < n; ++i) {
    const GenStep& s = (direction == trajdata::Direction::backward)
                           ? gen.steps[n - 1 - i]
                           : gen.steps[i];
    traj.states.push_back(s.state);
    traj.actions.push_back(s.action);
    traj.rewards.push_back(s.reward);
    traj.rtgs.push_back(s.rtg);
  }
  return traj;
}

void RtModel::save(const std::string& path) const {
  util::KeyValue cfg = cfg_.to_key_value();
  cfg.set("vocab_digest", util::hex64(trajdata::vocab_digest(vocab_)));
  ckpt::save(path, kCkptKind, cfg, params_);
}

RtModel RtModel::load(const std::string& path, const trajdata::Vocab& vocab) {
  ckpt::Header header = ckpt::peek(path);
  if (header.kind != kCkptKind)
    throw std::runtime_error("rtmodel load: checkpoint kind '" + header.kind +
                             "' is not a sequence model");
  const std::string want = util::hex64(trajdata::vocab_digest(vocab));
  const std::string have = header.config.get_or("vocab_digest", "");
  if (have != want)
    throw std::runtime_error("rtmodel load: vocabulary digest mismatch (checkpoint " +
                             have + ", current " + want + ")");
  RtConfig cfg = RtConfig::from_key_value(header.config);
  numkit::Rng init_rng(0);
  RtModel model(cfg, vocab, init_rng);
  ckpt::load_into(path, kCkptKind, model.params_);
  return model;
}

}  // namespace rtlab::rtmodel
