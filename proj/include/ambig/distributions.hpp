// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Soft labels from annotator votes, and the distribution-level losses and
// metrics used for training and evaluation. Natural logarithms throughout.

#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ambig/numcore.hpp"

namespace ambig {

// Lower clamp applied to predicted probabilities before any logarithm.
inline constexpr double kProbFloor = 1e-8;

struct VoteCounts {
  std::vector<int> counts;

  int annotator_total() const;
  std::size_t size() const { return counts.size(); }
  bool operator==(const VoteCounts&) const = default;
};

// Probability vector over C emotion classes.
struct EmotionDistribution {
  std::vector<double> probs;
  std::vector<std::string> class_names;  // empty or one label per class

  EmotionDistribution() = default;
  explicit EmotionDistribution(std::vector<double> p, std::vector<std::string> names = {});

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
  // Throws ValidationError unless every prob is in [0,1] and the sum is 1 ± tol.
  void validate(double tol = 1e-6) const;
  // Shannon entropy in nats.
  double entropy() const;
  // Class indices ordered by descending probability; ties keep index order.
  std::vector<std::size_t> ranking() const;
  bool operator==(const EmotionDistribution&) const = default;
};

EmotionDistribution aggregate_votes(const VoteCounts& votes, std::vector<std::string> class_names = {});

// Clamps to [kProbFloor, 1] and renormalises.
std::vector<double> smooth(std::span<const double> p);

// Σ p_gt·ln(p_gt / p̂) with p̂ smoothed and 0·ln 0 = 0.
double kl_forward(const EmotionDistribution& p_gt, const EmotionDistribution& p_hat);
double kl_forward(std::span<const double> p_gt, std::span<const double> p_hat);
// Differentiable w.r.t. p_hat (a [C] or [1×C] probability vector on a graph).
num::Var kl_forward(std::span<const double> p_gt, const num::Var& p_hat);

double js_divergence(std::span<const double> p, std::span<const double> q);
double js_divergence(const EmotionDistribution& p, const EmotionDistribution& q);
double bhattacharyya(std::span<const double> p, std::span<const double> q);
double bhattacharyya(const EmotionDistribution& p, const EmotionDistribution& q);
// (1/C)·Σ (p̂ − p_gt)²
double brier(std::span<const double> p_gt, std::span<const double> p_hat);
double brier(const EmotionDistribution& p_gt, const EmotionDistribution& p_hat);

using DistributionPair = std::pair<EmotionDistribution, EmotionDistribution>;  // (p_gt, p_hat)

// 1 − SS_res/SS_tot over all concatenated components, SS_tot taken around the
// single mean of the concatenated ground-truth components.
double r_squared(std::span<const DistributionPair> pairs);

struct MetricsReport {
  double js_mean = 0.0;
  double bc_mean = 0.0;
  double r2 = 0.0;  // NaN when the ground truth has zero variance
  double brier_mean = 0.0;
  std::size_t n = 0;
};

MetricsReport evaluate_batch(std::span<const DistributionPair> pairs);

}  // namespace ambig
