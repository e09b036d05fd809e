// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Structured reasoning trajectories:
//
//   [TEXT] semantic <lexical cues> [ambiguity]
//   [AUDIO] majority <class> <its cues> [minority <class> <its cues> ...]
//   [SYNTH] mixed|clear <classes by descending probability>
//   [ANSWER] <classes by descending probability> <eoa>
//
// Trajectories are token-id sequences that exclude the prompt.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ambig/distributions.hpp"
#include "ambig/vocabulary.hpp"

namespace ambig {

struct CotTrajectory {
  std::vector<int> text_analysis;
  std::vector<int> audio_analysis;
  std::vector<int> synthesis;
  std::vector<int> answer;
  std::vector<int> raw;  // markers, contents and the closing <eoa>

  const std::vector<int>& section(Section s) const;
  std::vector<int>& section(Section s);
  bool empty() const { return raw.empty(); }
  bool operator==(const CotTrajectory&) const = default;
};

enum class ParseRule { MissingMarker, DuplicateMarker, Order, UnexpectedPrefix, TrailingTokens, EmptySection };

const char* parse_rule_name(ParseRule rule);

struct ParseFailure {
  ParseRule rule;
  Section section;  // section the rule fired on
  std::string message;
};

struct ParseResult {
  std::optional<CotTrajectory> trajectory;
  std::optional<ParseFailure> failure;

  bool ok() const { return trajectory.has_value(); }
};

// Builds the reference trajectory for a sample from its cues, transcript and
// ground-truth distribution. Throws DegenerateSampleError without cues.
CotTrajectory synthesize_cot(std::span<const int> cue_tokens, std::span<const int> transcript_tokens,
                             const EmotionDistribution& p_gt, const Vocabulary& vocab);

// Target used when reasoning supervision is switched off: only the answer.
std::vector<int> answer_only_target(const EmotionDistribution& p_gt, const Vocabulary& vocab);

// Never throws; malformed input yields a failure naming the first violated rule.
ParseResult parse_trajectory(std::span<const int> ids, const Vocabulary& vocab);

// 0.25 for each section that is present once, correctly ordered relative to
// the other present sections and non-empty; 1.0 iff parse succeeds.
double format_reward(std::span<const int> ids, const Vocabulary& vocab);

// True iff the answer lists exactly the classes with p > 0, ordered by
// non-increasing probability (equal probabilities in any order).
bool validate_consistency(const CotTrajectory& traj, const EmotionDistribution& p_gt, const Vocabulary& vocab);

}  // namespace ambig
