// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <numeric>

#include "ambig/cot.hpp"
#include "ambig/errors.hpp"
#include "ambig/objectives.hpp"
#include "helpers.hpp"

using namespace ambig;
using ambig::testing::small_corpus;
using ambig::testing::toy_policy;

namespace {

bool bitwise_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

double kl_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

bool any_grad(PolicyParams& p) {
  for (auto* t : p.tensors()) {
    for (float g : t->grad) {
      if (g != 0.0f) return true;
    }
  }
  return false;
}

// Single-member group around the reference trajectory with a chosen
// old-policy offset and advantage.
RolloutGroup manual_group(const PolicyParams& p, const Sample& s, const Vocabulary& v, double offset, double adv) {
  RolloutGroup g;
  g.sample_id = s.id;
  g.prompt = build_prompt(s, v);
  g.trajectories.push_back(s.cot_gt.raw);
  auto lp = sequence_log_prob(p, g.prompt, s.cot_gt.raw);
  for (double& x : lp) x += offset;
  g.old_log_probs.push_back(lp);
  g.readouts.push_back(s.p_gt);
  g.rewards.push_back(0.0);
  g.advantages.push_back(adv);
  return g;
}

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("loss weights validation") {
    LossWeights w;
    CHECK_NOTHROW(w.validate());
    w.lambda1 = -1;
    CHECK_THROWS_AS(w.validate(), ValidationError);
    w = LossWeights{};
    w.epsilon_clip = 1.0;
    CHECK_THROWS_AS(w.validate(), ValidationError);
  }

  TEST_CASE("SFT with zero KL weight is exactly the cross-entropy") {
    const Corpus& c = small_corpus();
    PolicyParams p = toy_policy(c);
    LossWeights w;
    w.lambda_sft = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      num::Graph g;
      LossTerms terms;
      const num::Var loss = sft_loss(g, p, c.train[i], c.vocab, w, CotMode::Full, &terms);
      const auto lp = sequence_log_prob(p, build_prompt(c.train[i], c.vocab), c.train[i].cot_gt.raw);
      const double ce = -std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(lp.size());
      CHECK(bitwise_equal(loss.item(), terms.ce));
      CHECK(terms.kl == 0.0);
      CHECK(std::abs(loss.item() - ce) < 1e-9);
    }
  }

  TEST_CASE("SFT KL term vanishes when the readout equals the target") {
    const Corpus& c = small_corpus();
    PolicyParams p = toy_policy(c);
    const Sample& base = c.train[0];
    const auto prompt = build_prompt(base, c.vocab);
    // Relabel the sample with the policy's own readout.
    Sample s = base;
    s.p_gt = emotion_readout(p, prompt, s.cot_gt.raw, c.vocab);
    num::Graph g;
    LossTerms terms;
    const num::Var loss = sft_loss(g, p, s, c.vocab, LossWeights{}, CotMode::Full, &terms);
    CHECK(terms.kl < 1e-10);
    CHECK(std::abs(loss.item() - terms.ce) < 1e-10);
    CHECK(terms.kl >= 0.0);

    num::Graph g2;
    LossTerms t2;
    sft_loss(g2, p, base, c.vocab, LossWeights{}, CotMode::Full, &t2);
    const auto r = emotion_readout(p, prompt, base.cot_gt.raw, c.vocab);
    CHECK(t2.kl == doctest::Approx(kl_forward(base.p_gt, r)).epsilon(1e-9));
    CHECK(t2.total == doctest::Approx(t2.ce + 1.0 * t2.kl).epsilon(1e-12));
  }

  TEST_CASE("answer-only targets drop the reasoning tokens") {
    const Corpus& c = small_corpus();
    const auto t = training_target(c.train[0], c.vocab, CotMode::AnswerOnly);
    CHECK(t == answer_only_target(c.train[0].p_gt, c.vocab));
    CHECK(training_target(c.train[0], c.vocab) == c.train[0].cot_gt.raw);
  }

  TEST_CASE("negative selection") {
    const std::vector<std::vector<int>> rollouts{{1}, {2}, {3}};
    const std::vector<int> y_pos{9};
    CHECK(select_negative(std::vector<double>{0.1, 0.4, 0.2}, rollouts, y_pos, 0.15) == std::optional<std::size_t>(1));
    CHECK_FALSE(select_negative(std::vector<double>{0.1, 0.12, 0.05}, rollouts, y_pos, 0.15).has_value());
    CHECK(select_negative(std::vector<double>{0.3, 0.3, 0.1}, rollouts, y_pos, 0.15) == std::optional<std::size_t>(0));
    // The most divergent rollout is the positive itself.
    CHECK_FALSE(select_negative(std::vector<double>{0.1, 0.4, 0.2}, rollouts, std::vector<int>{2}, 0.15).has_value());
    CHECK_FALSE(select_negative(std::vector<double>{}, std::vector<std::vector<int>>{}, y_pos, 0.0).has_value());
    CHECK_THROWS_AS(select_negative(std::vector<double>{0.1}, rollouts, y_pos, 0.0), ContractError);
    // Disjoint one-hots sit at the JS ceiling and are always selected.
    const double top = js_divergence(std::vector<double>{1, 0}, std::vector<double>{0, 1});
    CHECK(top == doctest::Approx(std::log(2.0)));
    CHECK(select_negative(std::vector<double>{top}, std::vector<std::vector<int>>{{5}}, y_pos, 0.5).has_value());
  }

  TEST_CASE("mining reports every rollout and is seeded") {
    const Corpus& c = small_corpus();
    const PolicyParams p = toy_policy(c);
    Rng a = make_rng({3}), b = make_rng({3});
    MiningReport ra, rb;
    const auto pa = mine_preference_pair(p, c.train[1], c.vocab, 4, 0.0, a, RolloutOptions{1.0, 12}, CotMode::Full, &ra);
    const auto pb = mine_preference_pair(p, c.train[1], c.vocab, 4, 0.0, b, RolloutOptions{1.0, 12}, CotMode::Full, &rb);
    CHECK(ra.rollouts == rb.rollouts);
    CHECK(ra.js.size() == 4);
    REQUIRE(pa.has_value());
    CHECK(pa->y_neg == pb->y_neg);
    CHECK(pa->y_pos == c.train[1].cot_gt.raw);
    CHECK(pa->neg_js == *std::max_element(ra.js.begin(), ra.js.end()));
    for (std::size_t i = 0; i < 4; ++i) {
      const auto r = emotion_readout(p, pa->prompt, ra.rollouts[i], c.vocab);
      CHECK(ra.js[i] == doctest::Approx(js_divergence(r, c.train[1].p_gt)).epsilon(1e-12));
    }
    Rng r2 = make_rng({3});
    CHECK_FALSE(mine_preference_pair(p, c.train[1], c.vocab, 4, 10.0, r2, RolloutOptions{1.0, 12}).has_value());
  }

  TEST_CASE("DPO at the reference with no extra terms is ln 2") {
    const Corpus& c = small_corpus();
    PolicyParams p = toy_policy(c);
    const PolicyParams ref = p.clone();
    const Sample& s = c.train[2];
    Rng rng = make_rng({4});
    PreferencePair pair{build_prompt(s, c.vocab), s.cot_gt.raw, sample_trajectory(p, build_prompt(s, c.vocab), 1.0, 12, rng)};
    LossWeights w;
    w.lambda1 = w.lambda2 = 0.0;
    num::Graph g;
    LossTerms terms;
    const num::Var loss = dpo_total_loss(g, p, ref, pair, s, c.vocab, w, &terms);
    CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(terms.pref == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    PreferencePair empty = pair;
    empty.y_neg.clear();
    num::Graph g2;
    CHECK_THROWS_AS(dpo_total_loss(g2, p, ref, empty, s, c.vocab, w), ContractError);
  }

  TEST_CASE("DPO preference term falls as the policy favours the positive") {
    const Corpus& c = small_corpus();
    PolicyParams ref = toy_policy(c);
    const Sample& s = c.train[3];
    const auto prompt = build_prompt(s, c.vocab);
    Rng rng = make_rng({5});
    const PreferencePair pair{prompt, s.cot_gt.raw, sample_trajectory(ref, prompt, 1.0, 12, rng)};
    LossWeights w;
    w.lambda1 = w.lambda2 = 0.0;
    w.beta_dpo = 0.5;
    // Step along the gradient of the pair margin and watch the loss.
    PolicyParams p = ref.clone();
    p.set_trainable(true);
    double last = std::log(2.0) + 1e-12;
    for (int it = 0; it < 4; ++it) {
      num::Graph g;
      p.zero_grad();
      const num::Var loss = dpo_total_loss(g, p, ref, pair, s, c.vocab, w);
      CHECK(loss.item() < last);
      last = loss.item();
      g.backward(loss);
      for (auto* t : p.tensors()) {
        for (std::size_t i = 0; i < t->grad.size(); ++i) t->data[i] -= 0.05f * t->grad[i];
      }
    }
    // Oracle on the closed form: -ln σ(β m) is strictly decreasing in m.
    double prev = 1e9;
    for (double m = -5; m <= 5; m += 0.5) {
      const double l = std::log1p(std::exp(-w.beta_dpo * m));
      CHECK(l < prev);
      prev = l;
    }
  }

  TEST_CASE("DPO composite terms add up") {
    const Corpus& c = small_corpus();
    PolicyParams p = toy_policy(c);
    const PolicyParams ref = toy_policy(c, 43);
    const Sample& s = c.train[4];
    const auto prompt = build_prompt(s, c.vocab);
    Rng rng = make_rng({6});
    const PreferencePair pair{prompt, s.cot_gt.raw, sample_trajectory(p, prompt, 1.0, 12, rng)};
    const LossWeights w;
    num::Graph g;
    LossTerms t;
    const num::Var loss = dpo_total_loss(g, p, ref, pair, s, c.vocab, w, &t);
    CHECK(loss.item() == doctest::Approx(t.pref + w.lambda1 * t.kl + w.lambda2 * t.ce).epsilon(1e-12));

    auto sum = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); };
    const double margin = (sum(sequence_log_prob(p, prompt, pair.y_pos)) - sum(sequence_log_prob(ref, prompt, pair.y_pos))) -
                          (sum(sequence_log_prob(p, prompt, pair.y_neg)) - sum(sequence_log_prob(ref, prompt, pair.y_neg)));
    CHECK(t.pref == doctest::Approx(std::log1p(std::exp(-w.beta_dpo * margin))).epsilon(1e-9));
  }

  TEST_CASE("GRPO reward composition") {
    const Vocabulary& v = small_corpus().vocab;
    const Sample& s = small_corpus().train[0];
    LossWeights w;
    w.lambda3 = 0.25;
    const EmotionDistribution q({0.4, 0.3, 0.2, 0.1});
    const auto& good = s.cot_gt.raw;
    const std::vector<int> bad{v.class_token(0)};
    CHECK(grpo_reward(q, s.p_gt, good, v, w) == doctest::Approx(-kl_oracle(s.p_gt.probs, q.probs) + 0.25).epsilon(1e-9));
    CHECK(grpo_reward(q, s.p_gt, bad, v, w) == doctest::Approx(-kl_oracle(s.p_gt.probs, q.probs)).epsilon(1e-9));
    // Perfect readout, perfect format.
    const EmotionDistribution flat({0.25, 0.25, 0.25, 0.25});
    CHECK(grpo_reward(flat, flat, good, v, w) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(grpo_reward(flat, flat, bad, v, w) == doctest::Approx(0.0));
  }

  TEST_CASE("advantage normalisation") {
    const auto a = normalize_advantages(std::vector<double>{1, 2, 3});
    CHECK(a[0] == doctest::Approx(-1.224744871391589));
    CHECK(a[1] == doctest::Approx(0.0));
    CHECK(a[2] == doctest::Approx(1.224744871391589));
    CHECK(normalize_advantages(std::vector<double>{0.5, 0.5, 0.5}) == std::vector<double>(3, 0.0));
    CHECK_THROWS_AS(normalize_advantages(std::vector<double>{1.0}), ContractError);
    CHECK_THROWS_AS(normalize_advantages(std::vector<double>{}), ContractError);

    Rng rng = make_rng({11});
    std::uniform_real_distribution<double> u(-3, 3), shift(-50, 50);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> r(2 + rng() % 7);
      for (auto& x : r) x = u(rng);
      const auto adv = normalize_advantages(r);
      double mean = 0.0, sq = 0.0;
      for (double x : adv) mean += x;
      mean /= adv.size();
      for (double x : adv) sq += (x - mean) * (x - mean);
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::sqrt(sq / adv.size()) == doctest::Approx(1.0).epsilon(1e-9));
      auto moved = r;
      const double c = shift(rng);
      for (auto& x : moved) x += c;
      const auto adv2 = normalize_advantages(moved);
      for (std::size_t i = 0; i < adv.size(); ++i) CHECK(std::abs(adv[i] - adv2[i]) < 1e-8);
      std::vector<std::size_t> o1(r.size()), o2(r.size());
      std::iota(o1.begin(), o1.end(), 0);
      std::iota(o2.begin(), o2.end(), 0);
      std::stable_sort(o1.begin(), o1.end(), [&](auto x, auto y) { return r[x] < r[y]; });
      std::stable_sort(o2.begin(), o2.end(), [&](auto x, auto y) { return adv[x] < adv[y]; });
      CHECK(o1 == o2);
    }
  }

  TEST_CASE("rollout groups and reference injection") {
    const Corpus& c = small_corpus();
    const PolicyParams p = toy_policy(c);
    const Sample& s = c.train[5];
    LossWeights w;
    Rng rng = make_rng({7});
    RolloutGroup g = build_group(p, s, c.vocab, 4, w, rng, RolloutOptions{1.0, 16});
    REQUIRE(g.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(g.old_log_probs[k].size() == g.trajectories[k].size());
      CHECK(g.rewards[k] == doctest::Approx(grpo_reward(g.readouts[k], s.p_gt, g.trajectories[k], c.vocab, w)));
    }
    CHECK(g.advantages == normalize_advantages(g.rewards));
    Rng bad = make_rng({7});
    CHECK_THROWS_AS(build_group(p, s, c.vocab, 1, w, bad), ContractError);

    inject_gt_trajectory(g, s, p, c.vocab, w);
    REQUIRE(g.size() == 5);
    CHECK(g.gt_injected);
    CHECK(g.trajectories.back() == s.cot_gt.raw);
    CHECK(g.readouts.back() == s.p_gt);
    CHECK(std::abs(g.rewards.back() - w.lambda3) < 1e-6);
    CHECK(*std::max_element(g.rewards.begin(), g.rewards.end()) == g.rewards.back());
    CHECK(g.advantages == normalize_advantages(g.rewards));
    CHECK(std::abs(std::accumulate(g.advantages.begin(), g.advantages.end(), 0.0)) < 1e-9);
    CHECK_THROWS_AS(inject_gt_trajectory(g, s, p, c.vocab, w), ContractError);
  }

  TEST_CASE("GRPO objective is zero at the reference") {
    const Corpus& c = small_corpus();
    PolicyParams p = toy_policy(c);
    const PolicyParams ref = p.clone();
    Rng rng = make_rng({8});
    std::vector<RolloutGroup> groups;
    for (std::size_t i = 0; i < 2; ++i) groups.push_back(build_group(p, c.train[i], c.vocab, 4, LossWeights{}, rng, {1.0, 12}));
    inject_gt_trajectory(groups[0], c.train[0], p, c.vocab, LossWeights{});
    num::Graph g;
    GrpoTerms terms;
    const num::Var obj = grpo_objective(g, p, ref, groups, LossWeights{}, true, &terms);
    CHECK(std::abs(obj.item()) < 1e-9);
    CHECK(std::abs(terms.kl) < 1e-12);
    CHECK(terms.members == 9);

    num::Graph g2;
    GrpoTerms t2;
    grpo_objective(g2, p, ref, groups, LossWeights{}, false, &t2);
    CHECK(t2.members == 8);
    num::Graph g3;
    CHECK_THROWS_AS(grpo_objective(g3, p, ref, std::vector<RolloutGroup>{}, LossWeights{}), ContractError);
  }

  TEST_CASE("clipped ratios pass no gradient") {
    const Corpus& c = small_corpus();
    PolicyParams p = toy_policy(c);
    const PolicyParams ref = p.clone();
    p.set_trainable(true);
    LossWeights w;
    w.beta_grpo_kl = 0.0;
    // ρ = e > 1 + ε with Â > 0: the clipped branch is the minimum.
    const std::vector<RolloutGroup> clipped{manual_group(p, c.train[6], c.vocab, -1.0, 1.0)};
    {
      num::Graph g;
      p.zero_grad();
      const num::Var obj = grpo_objective(g, p, ref, clipped, w);
      CHECK(obj.item() == doctest::Approx(1.0 + w.epsilon_clip));
      g.backward(obj);
      CHECK_FALSE(any_grad(p));
    }
    // ρ = 1 sits inside the trust region and carries gradient.
    const std::vector<RolloutGroup> inside{manual_group(p, c.train[6], c.vocab, 0.0, 1.0)};
    {
      num::Graph g;
      p.zero_grad();
      const num::Var obj = grpo_objective(g, p, ref, inside, w);
      CHECK(obj.item() == doctest::Approx(1.0));
      g.backward(obj);
      CHECK(any_grad(p));
    }
    // With Â < 0 and ρ below 1 − ε the clipped branch is again the minimum.
    const std::vector<RolloutGroup> low{manual_group(p, c.train[6], c.vocab, 1.0, -1.0)};
    {
      num::Graph g;
      p.zero_grad();
      const num::Var obj = grpo_objective(g, p, ref, low, w);
      CHECK(obj.item() == doctest::Approx(-(1.0 - w.epsilon_clip)));
      g.backward(obj);
      CHECK_FALSE(any_grad(p));
    }
  }
}
