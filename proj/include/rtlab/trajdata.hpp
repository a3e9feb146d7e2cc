#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtlab/trajectory.hpp"

namespace rtlab::trajdata {

enum class Direction { forward, backward };

std::string direction_name(Direction d);
Direction direction_from_name(const std::string& s);  // throws on unknown names

// Slot-local token stream: 4 tokens per step in intra-step order
// (state, action, reward, rtg-bin); `backward` reverses step order only.
struct TokenSequence {
  std::vector<int> tokens;
  std::size_t step_count = 0;
  Direction direction = Direction::forward;
};

constexpr int kSlotsPerStep = 4;
enum Slot { kSlotState = 0, kSlotAction = 1, kSlotReward = 2, kSlotRtg = 3 };

// Per-slot vocabularies. States and actions are already dense ids; rewards
// are matched exactly against the observed set; RTGs fall into uniform bins
// whose edges are frozen at build time (edges.size() == bin count + 1).
struct Vocab {
  int state_count = 0;
  int action_count = 0;
  std::vector<double> rewards;    // sorted, distinct
  std::vector<double> rtg_edges;  // strictly increasing

  int rtg_bins() const { return static_cast<int>(rtg_edges.size()) - 1; }
  int slot_size(int slot) const;

  int encode_reward(double r) const;           // throws if not in the set
  double decode_reward(int token) const;
  // Out-of-range values clamp to the boundary bin; *clamped is bumped when
  // provided.
  int encode_rtg(double v, std::uint64_t* clamped = nullptr) const;
  double decode_rtg(int token) const;          // bin center
};

// Scans the dataset for the reward set and the observed RTG range. A
// degenerate (zero-width) RTG range is widened to unit width so the bins
// stay well-formed.
Vocab build_vocab(int state_count, int action_count,
                  const std::vector<Trajectory>& dataset, int rtg_bins = 32);

TokenSequence tokenize(const Trajectory& traj, const Vocab& vocab, Direction direction,
                       std::uint64_t* clamp_warnings = nullptr);

// Inverse up to RTG quantization (rtgs come back as bin centers). The
// episode flags (done, provenance, splice_index) are not token-encoded and
// come back defaulted.
Trajectory detokenize(const TokenSequence& seq, const Vocab& vocab);

// Newline-delimited records, one trajectory per line, doubles rendered with
// 17 significant digits so save/load round-trips bit-exactly.
void save_dataset(const std::vector<Trajectory>& trajs, const std::string& path);
std::vector<Trajectory> load_dataset(const std::string& path);

// Canonical serialized form of a vocabulary, also the basis of the digest
// that checkpoints embed to reject token-table mismatches.
std::string vocab_to_string(const Vocab& vocab);
std::uint64_t vocab_digest(const Vocab& vocab);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

}  // namespace rtlab::trajdata
