// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include "ambig/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ambig/cot.hpp"
#include "ambig/errors.hpp"

namespace ambig {

using num::Graph;
using num::Var;

namespace {

constexpr double kSigmaFloor = 1e-8;

std::vector<int> concat(std::span<const int> a, std::span<const int> b) {
  std::vector<int> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

double total(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

void LossWeights::validate() const {
  for (double w : {lambda_sft, lambda1, lambda2, lambda3, beta_dpo, beta_grpo_kl}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("loss weights must be finite and non-negative");
  }
  if (!(epsilon_clip > 0.0 && epsilon_clip < 1.0)) throw ValidationError("epsilon_clip must be in (0, 1)");
}

std::vector<int> training_target(const Sample& sample, const Vocabulary& vocab, CotMode mode) {
  return mode == CotMode::Full ? sample.cot_gt.raw : answer_only_target(sample.p_gt, vocab);
}

// ---- SFT ---------------------------------------------------------------------

Var sft_loss(Graph& g, PolicyParams& params, const Sample& sample, const Vocabulary& vocab, const LossWeights& weights,
             CotMode mode, LossTerms* terms) {
  const auto prompt = build_prompt(sample, vocab);
  const auto target = training_target(sample, vocab, mode);
  if (target.empty()) throw ContractError(sample.id + ": sample has no reference trajectory");
  Var logits = forward_logits(g, params, concat(prompt, target));
  Var ce = num::scale(num::mean(continuation_log_probs(logits, prompt.size(), target)), -1.0);
  Var loss = ce;
  double kl_value = 0.0;
  if (weights.lambda_sft != 0.0) {
    Var readout = emotion_readout(logits, readout_position(prompt, target, vocab), params.config().class_token_ids);
    Var kl = kl_forward(sample.p_gt.probs, readout);
    kl_value = kl.item();
    loss = num::add(ce, num::scale(kl, weights.lambda_sft));
  }
  if (terms) *terms = LossTerms{loss.item(), ce.item(), kl_value, 0.0};
  return loss;
}

// ---- DPO ---------------------------------------------------------------------

std::optional<std::size_t> select_negative(std::span<const double> js, std::span<const std::vector<int>> rollouts,
                                           std::span<const int> y_pos, double tau) {
  if (js.size() != rollouts.size()) throw ContractError("one JS value per rollout is required");
  if (js.empty()) return std::nullopt;
  const auto best = static_cast<std::size_t>(std::max_element(js.begin(), js.end()) - js.begin());
  if (js[best] < tau) return std::nullopt;
  if (std::equal(rollouts[best].begin(), rollouts[best].end(), y_pos.begin(), y_pos.end())) return std::nullopt;
  return best;
}

std::optional<PreferencePair> mine_preference_pair(const PolicyParams& params_old, const Sample& sample,
                                                   const Vocabulary& vocab, int n_rollouts, double tau, Rng& rng,
                                                   const RolloutOptions& options, CotMode mode,
                                                   MiningReport* report) {
  if (n_rollouts < 1) throw ContractError("mining needs at least one rollout");
  const auto prompt = build_prompt(sample, vocab);
  MiningReport local;
  MiningReport& r = report ? *report : local;
  r = MiningReport{};
  for (int i = 0; i < n_rollouts; ++i) {
    auto traj = sample_trajectory(params_old, prompt, options.temperature, options.max_new, rng);
    const auto readout = emotion_readout(params_old, prompt, traj, vocab);
    r.js.push_back(js_divergence(readout, sample.p_gt));
    r.rollouts.push_back(std::move(traj));
  }
  const auto y_pos = training_target(sample, vocab, mode);
  r.chosen = select_negative(r.js, r.rollouts, y_pos, tau);
  if (!r.chosen) return std::nullopt;
  return PreferencePair{prompt, y_pos, r.rollouts[*r.chosen], r.js[*r.chosen]};
}

Var dpo_total_loss(Graph& g, PolicyParams& params, const PolicyParams& params_ref, const PreferencePair& pair,
                   const Sample& sample, const Vocabulary& vocab, const LossWeights& weights, LossTerms* terms) {
  if (pair.y_pos.empty() || pair.y_neg.empty()) throw ContractError("preference pair has an empty side");
  const double ref_pos = total(sequence_log_prob(params_ref, pair.prompt, pair.y_pos));
  const double ref_neg = total(sequence_log_prob(params_ref, pair.prompt, pair.y_neg));

  Var logits_pos = forward_logits(g, params, concat(pair.prompt, pair.y_pos));
  Var lp_pos_tok = continuation_log_probs(logits_pos, pair.prompt.size(), pair.y_pos);
  Var lp_neg = num::sum(sequence_log_prob(g, params, pair.prompt, pair.y_neg));
  Var lp_pos = num::sum(lp_pos_tok);

  // margin = (lp_pos − ref_pos) − (lp_neg − ref_neg)
  Var margin = num::add_scalar(num::sub(lp_pos, lp_neg), ref_neg - ref_pos);
  Var pref = num::scale(num::log_sigmoid(num::scale(margin, weights.beta_dpo)), -1.0);
  Var loss = pref;
  double kl_value = 0.0, ce_value = 0.0;
  if (weights.lambda1 != 0.0) {
    Var readout = emotion_readout(logits_pos, readout_position(pair.prompt, pair.y_pos, vocab),
                                  params.config().class_token_ids);
    Var kl = kl_forward(sample.p_gt.probs, readout);
    kl_value = kl.item();
    loss = num::add(loss, num::scale(kl, weights.lambda1));
  }
  if (weights.lambda2 != 0.0) {
    Var ce = num::scale(num::mean(lp_pos_tok), -1.0);
    ce_value = ce.item();
    loss = num::add(loss, num::scale(ce, weights.lambda2));
  }
  if (terms) *terms = LossTerms{loss.item(), ce_value, kl_value, pref.item()};
  return loss;
}

// ---- GRPO --------------------------------------------------------------------

double grpo_reward(const EmotionDistribution& readout, const EmotionDistribution& p_gt, std::span<const int> trajectory,
                   const Vocabulary& vocab, const LossWeights& weights) {
  return -kl_forward(p_gt, readout) + weights.lambda3 * format_reward(trajectory, vocab);
}

std::vector<double> normalize_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) {
    throw ContractError("advantage normalisation needs a group of at least 2, got " + std::to_string(rewards.size()));
  }
  const double n = static_cast<double>(rewards.size());
  const double mu = total(rewards) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mu) * (r - mu);
  const double sigma = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (sigma < kSigmaFloor) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mu) / sigma;
  return out;
}

RolloutGroup build_group(const PolicyParams& params_old, const Sample& sample, const Vocabulary& vocab, int k,
                         const LossWeights& weights, Rng& rng, const RolloutOptions& options) {
  if (k < 2) throw ContractError("a rollout group needs K >= 2");
  RolloutGroup group;
  group.sample_id = sample.id;
  group.prompt = build_prompt(sample, vocab);
  for (int i = 0; i < k; ++i) {
    auto traj = sample_trajectory(params_old, group.prompt, options.temperature, options.max_new, rng);
    auto score = score_trajectory(params_old, group.prompt, traj, vocab);
    group.rewards.push_back(grpo_reward(score.readout, sample.p_gt, traj, vocab, weights));
    group.readouts.push_back(std::move(score.readout));
    group.old_log_probs.push_back(std::move(score.log_probs));
    group.trajectories.push_back(std::move(traj));
  }
  group.advantages = normalize_advantages(group.rewards);
  return group;
}

void inject_gt_trajectory(RolloutGroup& group, const Sample& sample, const PolicyParams& params_old,
                          const Vocabulary& vocab, const LossWeights& weights) {
  if (group.gt_injected) throw ContractError(group.sample_id + ": reference trajectory already injected");
  if (sample.cot_gt.empty()) throw ContractError(sample.id + ": sample has no reference trajectory");
  const auto& traj = sample.cot_gt.raw;
  group.old_log_probs.push_back(sequence_log_prob(params_old, group.prompt, traj));
  group.rewards.push_back(grpo_reward(sample.p_gt, sample.p_gt, traj, vocab, weights));
  group.readouts.push_back(sample.p_gt);
  group.trajectories.push_back(traj);
  group.advantages = normalize_advantages(group.rewards);
  group.gt_injected = true;
}

Var grpo_objective(Graph& g, PolicyParams& params, const PolicyParams& params_ref, std::span<const RolloutGroup> groups,
                   const LossWeights& weights, bool include_injected, GrpoTerms* terms) {
  const double lo = 1.0 - weights.epsilon_clip, hi = 1.0 + weights.epsilon_clip;
  Var objective = g.scalar(0.0);
  double surr_total = 0.0, kl_total = 0.0;
  std::size_t members = 0;
  for (const auto& group : groups) {
    const std::size_t n = group.size();
    if (group.advantages.size() != n || group.old_log_probs.size() != n) {
      throw ContractError(group.sample_id + ": " + std::to_string(group.advantages.size()) + " advantages for " +
                          std::to_string(n) + " trajectories");
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (group.gt_injected && k + 1 == n && !include_injected) continue;
      const auto& traj = group.trajectories[k];
      const auto& old = group.old_log_probs[k];
      if (old.size() != traj.size()) throw ContractError(group.sample_id + ": old log-probs do not cover trajectory");
      const double adv = group.advantages[k];
      const auto ref = sequence_log_prob(params_ref, group.prompt, traj);
      const num::Shape shape{traj.size()};

      Var lp = sequence_log_prob(g, params, group.prompt, traj);
      Var ratio = num::exp(num::sub(lp, g.constant(shape, old)));
      Var surr = num::minimum(num::scale(ratio, adv), num::scale(num::clamp(ratio, lo, hi), adv));
      Var delta = num::sub(g.constant(shape, ref), lp);
      Var kl = num::add_scalar(num::sub(num::exp(delta), delta), -1.0);
      const double inv_len = 1.0 / static_cast<double>(traj.size());
      Var s = num::scale(num::sum(surr), inv_len);
      Var k_mean = num::scale(num::sum(kl), inv_len);
      surr_total += s.item();
      kl_total += k_mean.item();
      objective = num::add(objective, num::sub(s, num::scale(k_mean, weights.beta_grpo_kl)));
      ++members;
    }
  }
  if (members == 0) throw ContractError("grpo objective needs at least one trajectory");
  const double inv = 1.0 / static_cast<double>(members);
  if (terms) *terms = GrpoTerms{surr_total * inv, kl_total * inv, members};
  return num::scale(objective, inv);
}

}  // namespace ambig
