// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic ambiguous-emotion corpus. Each sample has a latent emotion
// mixture; cue tokens (the acoustic surrogate) are emitted in proportion to
// it, a handful of simulated annotators vote from it, and the reference
// reasoning trajectory is synthesised from cues, transcript and votes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ambig/cot.hpp"
#include "ambig/distributions.hpp"
#include "ambig/rng.hpp"
#include "ambig/vocabulary.hpp"

namespace ambig {

struct Sample {
  std::string id;
  std::vector<int> cue_tokens;
  std::vector<int> transcript_tokens;
  VoteCounts votes;
  EmotionDistribution p_gt;
  CotTrajectory cot_gt;

  bool operator==(const Sample&) const = default;
};

// <bos> cues <sep> transcript <sep>
std::vector<int> build_prompt(const Sample& s, const Vocabulary& vocab);

struct CorpusConfig {
  std::string profile = "iemocap-like";
  int n_classes = 4;
  int n_train = 500;
  int n_eval = 100;
  int annotators_min = 3;
  int annotators_max = 3;
  double alpha = 0.3;          // symmetric Dirichlet concentration of the latent mixture
  int cues_per_sample = 24;
  double cue_leakage = 0.1;    // probability a cue is swapped for a wrong-class cue
  int transcript_len = 3;
  double lexical_rate = 0.5;   // probability a transcript token is an emotion word
  std::uint64_t seed = 42;

  void validate() const;
  // C = 4, three annotators.
  static CorpusConfig iemocap_like();
  // C = 6, four to twelve annotators, emotionally flat transcripts.
  static CorpusConfig cremad_like();
  static CorpusConfig for_profile(const std::string& name);
};

struct Corpus {
  Vocabulary vocab;
  int n_classes = 0;
  std::string profile;
  std::vector<Sample> train;
  std::vector<Sample> eval;

  bool operator==(const Corpus&) const = default;
};

// Latent mixtures behind a generated corpus (not persisted).
struct CorpusLatents {
  std::vector<EmotionDistribution> train;
  std::vector<EmotionDistribution> eval;
};

VoteCounts simulate_annotators(const EmotionDistribution& latent, int m, Rng& rng);

EmotionDistribution draw_latent(int n_classes, double alpha, Rng& rng);

Corpus generate_corpus(const CorpusConfig& config, CorpusLatents* latents = nullptr);

// Checks both sample invariants; throws ValidationError naming the sample.
void check_sample(const Sample& s, const Vocabulary& vocab);

// One split as JSON lines: a header object, then one record per sample.
// A non-empty `digest` is recorded in the header as "config_digest".
void save_split(const std::vector<Sample>& samples, const Corpus& meta, const std::string& split,
                const std::filesystem::path& path, const std::string& digest = {});
std::vector<Sample> load_split(const std::filesystem::path& path, const Vocabulary& vocab, int* n_classes = nullptr,
                               std::string* profile = nullptr);

// Writes train.jsonl, eval.jsonl and vocab.txt under `dir`.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir, const std::string& digest = {});
Corpus load_corpus(const std::filesystem::path& dir);

struct CorpusSummary {
  double mean_entropy = 0.0;
  std::vector<int> class_votes;            // total votes per class
  std::vector<int> support_histogram;      // samples by number of voted classes (index = count)
  std::size_t n = 0;
};

CorpusSummary summarize(std::span<const Sample> samples, int n_classes);

}  // namespace ambig
