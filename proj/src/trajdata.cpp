#include "rtlab/trajdata.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "rtlab/util.hpp"

namespace rtlab::trajdata {

std::string direction_name(Direction d) {
  return d == Direction::backward ? "backward" : "forward";
}

Direction direction_from_name(const std::string& s) {
  if (s == "backward") return Direction::backward;
  if (s == "forward") return Direction::forward;
  throw std::invalid_argument("unknown direction '" + s + "'");
}

int Vocab::slot_size(int slot) const {
  switch (slot) {
    case kSlotState: return state_count;
    case kSlotAction: return action_count;
    case kSlotReward: return static_cast<int>(rewards.size());
    case kSlotRtg: return rtg_bins();
  }
  throw std::out_of_range("slot_size: slot " + std::to_string(slot));
}

int Vocab::encode_reward(double r) const {
  auto it = std::lower_bound(rewards.begin(), rewards.end(), r);
  if (it == rewards.end() || *it != r)
    throw std::out_of_range("encode_reward: " + util::format_g17(r) +
                            " not in the reward set");
  return static_cast<int>(it - rewards.begin());
}

double Vocab::decode_reward(int token) const {
  if (token < 0 || token >= static_cast<int>(rewards.size()))
    throw std::out_of_range("decode_reward: token " + std::to_string(token));
  return rewards[static_cast<std::size_t>(token)];
}

int Vocab::encode_rtg(double v, std::uint64_t* clamped) const {
  if (v < rtg_edges.front()) {
    if (clamped) ++*clamped;
    return 0;
  }
  if (v > rtg_edges.back()) {
    if (clamped) ++*clamped;
    return rtg_bins() - 1;
  }
  auto it = std::upper_bound(rtg_edges.begin(), rtg_edges.end(), v);
  int bin = static_cast<int>(it - rtg_edges.begin()) - 1;
  return std::min(bin, rtg_bins() - 1);
}

double Vocab::decode_rtg(int token) const {
  if (token < 0 || token >= rtg_bins())
    throw std::out_of_range("decode_rtg: token " + std::to_string(token));
  return 0.5 * (rtg_edges[static_cast<std::size_t>(token)] +
                rtg_edges[static_cast<std::size_t>(token) + 1]);
}

Vocab build_vocab(int state_count, int action_count,
                  const std::vector<Trajectory>& dataset, int rtg_bins) {
  if (dataset.empty()) throw std::invalid_argument("build_vocab: empty dataset");
  if (rtg_bins < 1) throw std::invalid_argument("build_vocab: rtg_bins must be positive");
  std::set<double> reward_set;
  double lo = 0.0, hi = 0.0;
  bool seen = false;
  for (const auto& traj : dataset) {
    if (!traj.consistent())
      throw std::invalid_argument("build_vocab: trajectory field lengths differ");
    for (double r : traj.rewards) reward_set.insert(r);
    for (double v : traj.rtgs) {
      lo = seen ? std::min(lo, v) : v;
      hi = seen ? std::max(hi, v) : v;
      seen = true;
    }
  }
  if (!seen) throw std::invalid_argument("build_vocab: dataset has no steps");
  if (hi <= lo) hi = lo + 1.0;
  Vocab vocab;
  vocab.state_count = state_count;
  vocab.action_count = action_count;
  vocab.rewards.assign(reward_set.begin(), reward_set.end());
  vocab.rtg_edges.resize(static_cast<std::size_t>(rtg_bins) + 1);
  for (int i = 0; i <= rtg_bins; ++i)
    vocab.rtg_edges[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * (static_cast<double>(i) / rtg_bins);
  vocab.rtg_edges.front() = lo;
  vocab.rtg_edges.back() = hi;
  for (std::size_t i = 0; i + 1 < vocab.rtg_edges.size(); ++i)
    if (!(vocab.rtg_edges[i] < vocab.rtg_edges[i + 1]))
      throw std::logic_error("build_vocab: bin edges collapsed");
  return vocab;
}

TokenSequence tokenize(const Trajectory& traj, const Vocab& vocab, Direction direction,
                       std::uint64_t* clamp_warnings) {
  if (!traj.consistent())
    throw std::invalid_argument("tokenize: trajectory field lengths differ");
  TokenSequence seq;
  seq.step_count = traj.length();
  seq.direction = direction;
  seq.tokens.reserve(kSlotsPerStep * traj.length());
  for (std::size_t i = 0; i < traj.length(); ++i) {
    const std::size_t t = (direction == Direction::forward) ? i : traj.length() - 1 - i;
    const int s = traj.states[t], a = traj.actions[t];
    if (s < 0 || s >= vocab.state_count)
      throw std::out_of_range("tokenize: state " + std::to_string(s) + " out of range");
    if (a < 0 || a >= vocab.action_count)
      throw std::out_of_range("tokenize: action " + std::to_string(a) + " out of range");
    seq.tokens.push_back(s);
    seq.tokens.push_back(a);
    seq.tokens.push_back(vocab.encode_reward(traj.rewards[t]));
    seq.tokens.push_back(vocab.encode_rtg(traj.rtgs[t], clamp_warnings));
  }
  return seq;
}

Trajectory detokenize(const TokenSequence& seq, const Vocab& vocab) {
  if (seq.tokens.size() != kSlotsPerStep * seq.step_count)
    throw std::invalid_argument("detokenize: token count does not match step count");
  Trajectory traj;
  for (std::size_t i = 0; i < seq.step_count; ++i) {
    const std::size_t g =
        (seq.direction == Direction::forward) ? i : seq.step_count - 1 - i;
    const int* tok = seq.tokens.data() + kSlotsPerStep * g;
    if (tok[kSlotState] < 0 || tok[kSlotState] >= vocab.state_count)
      throw std::out_of_range("detokenize: state token out of range");
    if (tok[kSlotAction] < 0 || tok[kSlotAction] >= vocab.action_count)
      throw std::out_of_range("detokenize: action token out of range");
    traj.states.push_back(tok[kSlotState]);
    traj.actions.push_back(tok[kSlotAction]);
    traj.rewards.push_back(vocab.decode_reward(tok[kSlotReward]));
    traj.rtgs.push_back(vocab.decode_rtg(tok[kSlotRtg]));
  }
  return traj;
}

namespace {

template <typename T, typename Fmt>
void append_array(std::string& out, const std::vector<T>& v, Fmt fmt) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  out += ']';
}

[[noreturn]] void line_error(const char* op, std::size_t line, const std::string& what) {
  throw std::runtime_error(std::string(op) + ": line " + std::to_string(line) + ": " + what);
}

std::vector<int> int_array(const nlohmann::json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_array())
    throw std::runtime_error(std::string(field) + " missing or not an array");
  std::vector<int> out;
  for (const auto& e : j[field]) {
    if (!e.is_number_integer()) throw std::runtime_error(std::string(field) + " has a non-integer");
    out.push_back(e.get<int>());
  }
  return out;
}

std::vector<double> double_array(const nlohmann::json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_array())
    throw std::runtime_error(std::string(field) + " missing or not an array");
  std::vector<double> out;
  for (const auto& e : j[field]) {
    if (!e.is_number()) throw std::runtime_error(std::string(field) + " has a non-number");
    out.push_back(e.get<double>());
  }
  return out;
}

}  // namespace

void save_dataset(const std::vector<Trajectory>& trajs, const std::string& path) {
  std::string out;
  auto fmt_int = [](int v) { return std::to_string(v); };
  auto fmt_dbl = [](double v) { return util::format_g17(v); };
  for (const auto& traj : trajs) {
    if (!traj.consistent())
      throw std::invalid_argument("save_dataset: trajectory field lengths differ");
    out += "{\"states\":";
    append_array(out, traj.states, fmt_int);
    out += ",\"actions\":";
    append_array(out, traj.actions, fmt_int);
    out += ",\"rewards\":";
    append_array(out, traj.rewards, fmt_dbl);
    out += ",\"rtgs\":";
    append_array(out, traj.rtgs, fmt_dbl);
    out += ",\"done\":";
    out += traj.done ? "true" : "false";
    out += ",\"provenance\":\"";
    out += (traj.provenance == Provenance::generated) ? "generated" : "original";
    out += "\",\"splice_index\":";
    out += traj.splice_index ? std::to_string(*traj.splice_index) : std::string("null");
    out += "}\n";
  }
  util::write_file(path, out);
}

std::vector<Trajectory> load_dataset(const std::string& path) {
  std::istringstream in(util::read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();

  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    if (lines[i].empty()) line_error("load_dataset", lineno, "empty line");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      line_error("load_dataset", lineno, e.what());
    }
    try {
      if (!j.is_object()) throw std::runtime_error("record is not an object");
      Trajectory traj;
      traj.states = int_array(j, "states");
      traj.actions = int_array(j, "actions");
      traj.rewards = double_array(j, "rewards");
      traj.rtgs = double_array(j, "rtgs");
      if (!j.contains("done") || !j["done"].is_boolean())
        throw std::runtime_error("done missing or not a boolean");
      traj.done = j["done"].get<bool>();
      const std::string prov = j.value("provenance", std::string());
      if (prov == "original") traj.provenance = Provenance::original;
      else if (prov == "generated") traj.provenance = Provenance::generated;
      else throw std::runtime_error("provenance must be original or generated");
      if (!j.contains("splice_index")) throw std::runtime_error("splice_index missing");
      if (!j["splice_index"].is_null()) {
        if (!j["splice_index"].is_number_unsigned())
          throw std::runtime_error("splice_index must be null or a non-negative integer");
        traj.splice_index = j["splice_index"].get<std::size_t>();
      }
      if (!traj.consistent()) throw std::runtime_error("field lengths differ");
      out.push_back(std::move(traj));
    } catch (const std::exception& e) {
      line_error("load_dataset", lineno, e.what());
    }
  }
  return out;
}

std::string vocab_to_string(const Vocab& vocab) {
  std::string out = "{\"state_count\":" + std::to_string(vocab.state_count) +
                    ",\"action_count\":" + std::to_string(vocab.action_count) +
                    ",\"rewards\":";
  auto fmt_dbl = [](double v) { return util::format_g17(v); };
  append_array(out, vocab.rewards, fmt_dbl);
  out += ",\"rtg_edges\":";
  append_array(out, vocab.rtg_edges, fmt_dbl);
  out += "}\n";
  return out;
}

std::uint64_t vocab_digest(const Vocab& vocab) {
  return util::fnv1a64(vocab_to_string(vocab));
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  util::write_file(path, vocab_to_string(vocab));
}

Vocab load_vocab(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(util::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_vocab: " + std::string(e.what()));
  }
  Vocab vocab;
  try {
    if (!j.is_object()) throw std::runtime_error("not an object");
    if (!j.contains("state_count") || !j["state_count"].is_number_integer())
      throw std::runtime_error("state_count missing");
    if (!j.contains("action_count") || !j["action_count"].is_number_integer())
      throw std::runtime_error("action_count missing");
    vocab.state_count = j["state_count"].get<int>();
    vocab.action_count = j["action_count"].get<int>();
    vocab.rewards = double_array(j, "rewards");
    vocab.rtg_edges = double_array(j, "rtg_edges");
  } catch (const std::exception& e) {
    throw std::runtime_error("load_vocab: " + std::string(e.what()));
  }
  if (!std::is_sorted(vocab.rewards.begin(), vocab.rewards.end()))
    throw std::runtime_error("load_vocab: reward set not sorted");
  if (vocab.rtg_edges.size() < 2)
    throw std::runtime_error("load_vocab: need at least two bin edges");
  for (std::size_t i = 0; i + 1 < vocab.rtg_edges.size(); ++i)
    if (!(vocab.rtg_edges[i] < vocab.rtg_edges[i + 1]))
      throw std::runtime_error("load_vocab: bin edges not increasing");
  return vocab;
}

}  // namespace rtlab::trajdata
