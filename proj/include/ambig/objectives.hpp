// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Ambiguity-aware training objectives.
//
//   SFT   CE(trajectory) + λ·KL(p_gt ‖ p̂)
//   DPO   −ln σ(β·margin) + λ1·KL(p_gt ‖ p̂_pos) + λ2·CE(y_pos)
//   GRPO  clipped ratio surrogate on group-normalised rewards
//         r = −KL(p_gt ‖ p̂) + λ3·format, minus β·KL(π_θ ‖ π_ref)
//
// Loss builders record onto a caller-owned graph so the caller decides when
// to run backward.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ambig/corpus.hpp"
#include "ambig/numcore.hpp"
#include "ambig/policy.hpp"

namespace ambig {

struct LossWeights {
  double lambda_sft = 1.0;
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  double lambda3 = 0.1;
  double beta_dpo = 0.1;
  double beta_grpo_kl = 0.04;
  double epsilon_clip = 0.2;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Full reasoning trajectory, or only the answer section.
enum class CotMode { Full, AnswerOnly };

std::vector<int> training_target(const Sample& sample, const Vocabulary& vocab, CotMode mode = CotMode::Full);

struct RolloutOptions {
  double temperature = 1.0;
  int max_new = 64;
};

// ---- SFT ---------------------------------------------------------------------

struct LossTerms {
  double total = 0.0;
  double ce = 0.0;
  double kl = 0.0;
  double pref = 0.0;  // DPO preference term
};

// Mean per-token CE over the target plus λ·KL at the readout position. The
// KL term is not recorded at all when λ = 0.
num::Var sft_loss(num::Graph& g, PolicyParams& params, const Sample& sample, const Vocabulary& vocab,
                  const LossWeights& weights, CotMode mode = CotMode::Full, LossTerms* terms = nullptr);

// ---- DPO ---------------------------------------------------------------------

struct PreferencePair {
  std::vector<int> prompt;
  std::vector<int> y_pos;
  std::vector<int> y_neg;
  double neg_js = 0.0;
};

struct MiningReport {
  std::vector<std::vector<int>> rollouts;
  std::vector<double> js;
  std::optional<std::size_t> chosen;
};

// Index of the maximum-JS rollout (first on ties) when its JS ≥ tau and it
// differs from y_pos; none otherwise.
std::optional<std::size_t> select_negative(std::span<const double> js, std::span<const std::vector<int>> rollouts,
                                           std::span<const int> y_pos, double tau);

std::optional<PreferencePair> mine_preference_pair(const PolicyParams& params_old, const Sample& sample,
                                                   const Vocabulary& vocab, int n_rollouts, double tau, Rng& rng,
                                                   const RolloutOptions& options = {},
                                                   CotMode mode = CotMode::Full, MiningReport* report = nullptr);

num::Var dpo_total_loss(num::Graph& g, PolicyParams& params, const PolicyParams& params_ref,
                        const PreferencePair& pair, const Sample& sample, const Vocabulary& vocab,
                        const LossWeights& weights, LossTerms* terms = nullptr);

// ---- GRPO --------------------------------------------------------------------

struct RolloutGroup {
  std::string sample_id;
  std::vector<int> prompt;
  std::vector<std::vector<int>> trajectories;
  std::vector<EmotionDistribution> readouts;
  std::vector<std::vector<double>> old_log_probs;
  std::vector<double> rewards;
  std::vector<double> advantages;
  bool gt_injected = false;

  std::size_t size() const { return trajectories.size(); }
};

double grpo_reward(const EmotionDistribution& readout, const EmotionDistribution& p_gt,
                   std::span<const int> trajectory, const Vocabulary& vocab, const LossWeights& weights);

// (r − μ)/σ with population σ; all zeros when σ < 1e-8. Throws for K < 2.
std::vector<double> normalize_advantages(std::span<const double> rewards);

// Samples K trajectories from π_old and fills readouts, old log-probs,
// rewards and advantages.
RolloutGroup build_group(const PolicyParams& params_old, const Sample& sample, const Vocabulary& vocab, int k,
                         const LossWeights& weights, Rng& rng, const RolloutOptions& options = {});

// Appends the reference trajectory as an extra member and renormalises.
// The member is the annotated reference itself, so its readout is p_gt.
void inject_gt_trajectory(RolloutGroup& group, const Sample& sample, const PolicyParams& params_old,
                          const Vocabulary& vocab, const LossWeights& weights);

struct GrpoTerms {
  double surrogate = 0.0;
  double kl = 0.0;
  std::size_t members = 0;
};

// Objective to maximise: mean over members of the length-normalised sum of
// min(ρ·Â, clip(ρ)·Â) − β·(e^Δ − Δ − 1), Δ = log π_ref − log π_θ.
// With include_injected = false the injected member only shapes advantages.
num::Var grpo_objective(num::Graph& g, PolicyParams& params, const PolicyParams& params_ref,
                        std::span<const RolloutGroup> groups, const LossWeights& weights,
                        bool include_injected = true, GrpoTerms* terms = nullptr);

}  // namespace ambig
