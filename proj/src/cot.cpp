// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include "ambig/cot.hpp"

#include <algorithm>
#include <array>
#include <utility>

#include "ambig/errors.hpp"

namespace ambig {

namespace {

constexpr std::array<Section, kNumSections> kSections = {Section::Text, Section::Audio, Section::Synthesis,
                                                         Section::Answer};

const char* section_name(Section s) {
  switch (s) {
    case Section::Text: return "text";
    case Section::Audio: return "audio";
    case Section::Synthesis: return "synthesis";
    case Section::Answer: return "answer";
  }
  return "?";
}

// Classes with p > 0, most probable first.
std::vector<std::size_t> ranked_support(const EmotionDistribution& p) {
  std::vector<std::size_t> out;
  for (std::size_t c : p.ranking()) {
    if (p[c] > 0.0) out.push_back(c);
  }
  return out;
}

struct MarkerScan {
  std::array<std::vector<std::size_t>, kNumSections> positions;
  std::optional<std::size_t> eoa;
};

MarkerScan scan(std::span<const int> ids, const Vocabulary& vocab) {
  MarkerScan s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (auto sec = vocab.section_of(ids[i])) {
      s.positions[static_cast<std::size_t>(*sec)].push_back(i);
    } else if (ids[i] == vocab.eoa() && !s.eoa) {
      s.eoa = i;
    }
  }
  return s;
}

// Content of the section starting after `marker_pos`: up to the next marker,
// the first <eoa>, or the end.
std::pair<std::size_t, std::size_t> content_range(std::span<const int> ids, std::size_t marker_pos,
                                                  const Vocabulary& vocab) {
  std::size_t end = marker_pos + 1;
  while (end < ids.size() && !vocab.section_of(ids[end]) && ids[end] != vocab.eoa()) ++end;
  return {marker_pos + 1, end};
}

}  // namespace

const std::vector<int>& CotTrajectory::section(Section s) const {
  switch (s) {
    case Section::Text: return text_analysis;
    case Section::Audio: return audio_analysis;
    case Section::Synthesis: return synthesis;
    case Section::Answer: return answer;
  }
  return answer;
}

std::vector<int>& CotTrajectory::section(Section s) {
  return const_cast<std::vector<int>&>(std::as_const(*this).section(s));
}

const char* parse_rule_name(ParseRule rule) {
  switch (rule) {
    case ParseRule::MissingMarker: return "missing";
    case ParseRule::DuplicateMarker: return "duplicate";
    case ParseRule::Order: return "order";
    case ParseRule::UnexpectedPrefix: return "prefix";
    case ParseRule::TrailingTokens: return "trailing";
    case ParseRule::EmptySection: return "empty";
  }
  return "?";
}

CotTrajectory synthesize_cot(std::span<const int> cue_tokens, std::span<const int> transcript_tokens,
                             const EmotionDistribution& p_gt, const Vocabulary& vocab) {
  if (cue_tokens.empty()) {
    throw DegenerateSampleError("sample has no cue tokens");
  }
  p_gt.validate();
  const auto support = ranked_support(p_gt);
  const bool ambiguous = support.size() > 1;

  CotTrajectory t;
  t.text_analysis.push_back(vocab.id(words::kSemantic));
  for (int tok : transcript_tokens) {
    if (vocab.entry(tok).kind == TokenKind::Lexical) t.text_analysis.push_back(tok);
  }
  if (ambiguous) t.text_analysis.push_back(vocab.id(words::kAmbiguity));

  for (std::size_t rank = 0; rank < support.size(); ++rank) {
    if (rank == 0) t.audio_analysis.push_back(vocab.id(words::kMajority));
    if (rank == 1) t.audio_analysis.push_back(vocab.id(words::kMinority));
    const int c = static_cast<int>(support[rank]);
    t.audio_analysis.push_back(vocab.class_token(c));
    std::vector<int> seen;
    for (int tok : cue_tokens) {
      const auto& e = vocab.entry(tok);
      if (e.kind == TokenKind::Cue && e.group == c && std::find(seen.begin(), seen.end(), tok) == seen.end()) {
        seen.push_back(tok);
        t.audio_analysis.push_back(tok);
      }
    }
  }

  t.synthesis.push_back(vocab.id(ambiguous ? words::kMixed : words::kClear));
  for (std::size_t c : support) t.synthesis.push_back(vocab.class_token(static_cast<int>(c)));
  for (std::size_t c : support) t.answer.push_back(vocab.class_token(static_cast<int>(c)));

  for (Section s : kSections) {
    t.raw.push_back(vocab.marker(s));
    const auto& body = t.section(s);
    t.raw.insert(t.raw.end(), body.begin(), body.end());
  }
  t.raw.push_back(vocab.eoa());
  return t;
}

std::vector<int> answer_only_target(const EmotionDistribution& p_gt, const Vocabulary& vocab) {
  std::vector<int> out{vocab.marker(Section::Answer)};
  for (std::size_t c : ranked_support(p_gt)) out.push_back(vocab.class_token(static_cast<int>(c)));
  out.push_back(vocab.eoa());
  return out;
}

ParseResult parse_trajectory(std::span<const int> ids, const Vocabulary& vocab) {
  ParseResult r;
  auto fail = [&r](ParseRule rule, Section s, std::string msg) {
    r.failure = ParseFailure{rule, s, std::string(parse_rule_name(rule)) + ": " + std::move(msg)};
    return r;
  };
  const MarkerScan s = scan(ids, vocab);
  for (Section sec : kSections) {
    const auto& pos = s.positions[static_cast<std::size_t>(sec)];
    if (pos.empty()) return fail(ParseRule::MissingMarker, sec, std::string(section_name(sec)) + " marker absent");
    if (pos.size() > 1) return fail(ParseRule::DuplicateMarker, sec, std::string(section_name(sec)) + " marker repeated");
  }
  for (std::size_t i = 1; i < kNumSections; ++i) {
    if (s.positions[i][0] < s.positions[i - 1][0]) {
      return fail(ParseRule::Order, kSections[i],
                  std::string(section_name(kSections[i])) + " precedes " + section_name(kSections[i - 1]));
    }
  }
  if (s.positions[0][0] != 0) return fail(ParseRule::UnexpectedPrefix, Section::Text, "tokens before the text marker");
  if (s.eoa && *s.eoa + 1 != ids.size()) {
    return fail(ParseRule::TrailingTokens, Section::Answer, "tokens after <eoa>");
  }
  CotTrajectory t;
  for (std::size_t i = 0; i < kNumSections; ++i) {
    const std::size_t begin = s.positions[i][0] + 1;
    const std::size_t end = i + 1 < kNumSections ? s.positions[i + 1][0] : (s.eoa ? *s.eoa : ids.size());
    if (begin >= end) {
      return fail(ParseRule::EmptySection, kSections[i], std::string(section_name(kSections[i])) + " section is empty");
    }
    auto& body = t.section(kSections[i]);
    body.assign(ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(end));
  }
  t.raw.assign(ids.begin(), ids.end());
  r.trajectory = std::move(t);
  return r;
}

double format_reward(std::span<const int> ids, const Vocabulary& vocab) {
  const MarkerScan s = scan(ids, vocab);
  const bool trailing = s.eoa && *s.eoa + 1 != ids.size();
  int satisfied = 0;
  for (std::size_t i = 0; i < kNumSections; ++i) {
    const auto& pos = s.positions[i];
    if (pos.size() != 1) continue;
    const std::size_t p = pos[0];
    if (i == 0 && p != 0) continue;
    if (s.eoa && p > *s.eoa) continue;
    if (i + 1 == kNumSections && trailing) continue;
    bool ordered = true;
    for (std::size_t j = 0; j < kNumSections; ++j) {
      if (j == i || s.positions[j].size() != 1) continue;
      const std::size_t q = s.positions[j][0];
      if ((j < i && q > p) || (j > i && q < p)) ordered = false;
    }
    if (!ordered) continue;
    const auto [begin, end] = content_range(ids, p, vocab);
    if (begin >= end) continue;
    ++satisfied;
  }
  return 0.25 * satisfied;
}

bool validate_consistency(const CotTrajectory& traj, const EmotionDistribution& p_gt, const Vocabulary& vocab) {
  if (traj.empty() || traj.answer.empty()) {
    throw ContractError("validate_consistency needs a parsed trajectory");
  }
  std::vector<bool> mentioned(p_gt.size(), false);
  double prev = 2.0;
  for (int tok : traj.answer) {
    const auto c = vocab.class_of(tok);
    if (!c || static_cast<std::size_t>(*c) >= p_gt.size()) return false;
    const auto ci = static_cast<std::size_t>(*c);
    if (mentioned[ci] || p_gt[ci] <= 0.0 || p_gt[ci] > prev) return false;
    mentioned[ci] = true;
    prev = p_gt[ci];
  }
  for (std::size_t c = 0; c < p_gt.size(); ++c) {
    if (p_gt[c] > 0.0 && !mentioned[c]) return false;
  }
  return true;
}

}  // namespace ambig
