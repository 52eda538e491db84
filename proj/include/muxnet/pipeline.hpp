// SPDX-License-Identifier: Apache-2.0
#pragma once

// Segment classification and class-wise early-stop voting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "muxnet/error.hpp"
#include "muxnet/inference.hpp"

namespace muxnet {

struct SegmentConfig {
  double segment_seconds = 5.0;
  int votes_per_epoch = 6;
  double sample_rate_hz = 100.0;

  std::size_t samples_per_segment() const noexcept {
    return static_cast<std::size_t>(std::llround(segment_seconds * sample_rate_hz));
  }
  void validate() const {
    require(segment_seconds > 0.0 && std::isfinite(segment_seconds), Errc::InvalidArgument,
            "segment_seconds must be positive");
    require(sample_rate_hz > 0.0 && std::isfinite(sample_rate_hz), Errc::InvalidArgument,
            "sample_rate_hz must be positive");
    require(votes_per_epoch >= 1, Errc::InvalidArgument, "votes_per_epoch must be >= 1");
  }
  static SegmentConfig from(const ModelHeader& h) { return {h.segment_seconds, h.votes_per_epoch, h.sample_rate_hz}; }
};

/// Saturates samples to the model's activation range, then runs the engine.
inline int classify_segment(std::span<const std::int64_t> samples, MuxInference& inference) {
  const auto& h = inference.model().header;
  const auto seg = SegmentConfig::from(h);
  const auto expected = static_cast<std::size_t>(h.input_channels) * seg.samples_per_segment();
  if (samples.size() != expected || static_cast<std::size_t>(h.input_length) != seg.samples_per_segment()) {
    fail(Errc::SegmentLengthError, "segment has " + std::to_string(samples.size()) + " samples, expected " +
                                       std::to_string(expected));
  }
  std::vector<std::int64_t> x(samples.begin(), samples.end());
  for (auto& v : x) v = saturate(v, h.activation_bits, Signedness::TwosComplement);
  return inference.classify(x);
}

/// Smallest uniform threshold for which an early winner always wins the full vote.
inline std::vector<int> safe_thresholds(int votes_per_epoch, int classes) {
  return std::vector<int>(static_cast<std::size_t>(std::max(classes, 0)), votes_per_epoch / 2 + 1);
}

class VoteState {
 public:
  VoteState(int classes, int votes_per_epoch, std::vector<int> thresholds)
      : counts_(static_cast<std::size_t>(classes), 0), thresholds_(std::move(thresholds)), votes_(votes_per_epoch) {
    require(classes >= 1 && classes <= kMaxClasses, Errc::InvalidArgument, "class count must be in [1, 10]");
    require(votes_per_epoch >= 1, Errc::InvalidArgument, "votes_per_epoch must be >= 1");
    require(thresholds_.size() == counts_.size(), Errc::InvalidArgument, "one threshold per class required");
  }
  VoteState(int classes, int votes_per_epoch)
      : VoteState(classes, votes_per_epoch, safe_thresholds(votes_per_epoch, classes)) {}

  void push(int prediction) {
    if (decided_) fail(Errc::VoteAfterDecision, "epoch already decided");
    require(prediction >= 0 && static_cast<std::size_t>(prediction) < counts_.size(), Errc::InvalidArgument,
            "prediction out of class range");
    const auto p = static_cast<std::size_t>(prediction);
    ++counts_[p];
    ++seen_;
    if (counts_[p] >= thresholds_[p]) {
      decided_ = prediction;
    } else if (seen_ == votes_) {
      decided_ = plurality();
    }
  }

  /// Most votes, lowest class id on ties.
  int plurality() const noexcept {
    return static_cast<int>(std::max_element(counts_.begin(), counts_.end()) - counts_.begin());
  }

  std::optional<int> decided() const noexcept { return decided_; }
  int seen() const noexcept { return seen_; }
  int votes_per_epoch() const noexcept { return votes_; }
  const std::vector<int>& counts() const noexcept { return counts_; }
  const std::vector<int>& thresholds() const noexcept { return thresholds_; }

 private:
  std::vector<int> counts_;
  std::vector<int> thresholds_;
  int votes_;
  int seen_ = 0;
  std::optional<int> decided_;
};

inline VoteState vote_push(VoteState state, int prediction) {
  state.push(prediction);
  return state;
}

struct EpochResult {
  int stage = 0;
  int classifications_used = 0;
  std::vector<int> votes;
};

/// Classifies segments 0, 1, ... lazily via `classify_next(i)` until the vote decides.
template <typename Classify>
EpochResult epoch_stage(int classes, int votes_per_epoch, const std::vector<int>& thresholds, Classify&& classify_next) {
  VoteState state(classes, votes_per_epoch, thresholds);
  EpochResult result;
  while (!state.decided()) {
    const int p = classify_next(state.seen());
    result.votes.push_back(p);
    state.push(p);
  }
  result.stage = *state.decided();
  result.classifications_used = state.seen();
  return result;
}

/// Runs one epoch over `segments` (each the model's segment length).
inline EpochResult epoch_stage(std::span<const std::vector<std::int64_t>> segments, MuxInference& inference,
                               const std::vector<int>& thresholds) {
  const auto& h = inference.model().header;
  require(segments.size() >= static_cast<std::size_t>(h.votes_per_epoch), Errc::SegmentLengthError,
          "epoch needs votes_per_epoch segments");
  return epoch_stage(h.class_count, h.votes_per_epoch, thresholds,
                     [&](int i) { return classify_segment(segments[static_cast<std::size_t>(i)], inference); });
}

/// `epoch,stage,classifications_used,vote0..vote{V-1}`; unexecuted votes are empty.
inline void write_evaluation_csv(std::ostream& os, std::span<const EpochResult> epochs, int votes_per_epoch) {
  os << "epoch,stage,classifications_used";
  for (int v = 0; v < votes_per_epoch; ++v) os << ",vote" << v;
  os << '\n';
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    const auto& r = epochs[e];
    os << e << ',' << r.stage << ',' << r.classifications_used;
    for (int v = 0; v < votes_per_epoch; ++v) {
      os << ',';
      if (static_cast<std::size_t>(v) < r.votes.size()) os << r.votes[static_cast<std::size_t>(v)];
    }
    os << '\n';
  }
}

struct VoteSavings {
  std::uint64_t epochs = 0;
  std::uint64_t classifications = 0;
  double mean_used = 0.0;
  double saved_fraction = 0.0;  // 1 - used / (epochs * votes_per_epoch)
};

/// Stage-stable synthetic workload: each segment predicts the epoch's stage
/// with probability `p_correct`, otherwise a uniformly random other class.
inline VoteSavings simulate_vote_savings(std::uint64_t seed, std::uint64_t epochs, double p_correct, int classes,
                                         int votes_per_epoch, const std::vector<int>& thresholds) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> stage_dist(0, classes - 1);
  std::uniform_int_distribution<int> other_dist(1, std::max(classes - 1, 1));
  std::bernoulli_distribution correct(p_correct);
  VoteSavings out;
  for (std::uint64_t e = 0; e < epochs; ++e) {
    const int stage = stage_dist(rng);
    const auto r = epoch_stage(classes, votes_per_epoch, thresholds, [&](int) {
      return correct(rng) || classes == 1 ? stage : (stage + other_dist(rng)) % classes;
    });
    out.classifications += static_cast<std::uint64_t>(r.classifications_used);
  }
  out.epochs = epochs;
  if (epochs > 0) {
    out.mean_used = static_cast<double>(out.classifications) / static_cast<double>(epochs);
    out.saved_fraction = 1.0 - out.mean_used / votes_per_epoch;
  }
  return out;
}

}  // namespace muxnet
