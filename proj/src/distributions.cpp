// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include "ambig/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ambig/errors.hpp"

namespace ambig {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": distributions have " + std::to_string(a) + " and " +
                         std::to_string(b) + " classes");
  }
}

// Σ p·ln(p/q) over p > 0; q must be positive wherever p is.
double kl_raw(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      s += p[i] * std::log(p[i] / q[i]);
    }
  }
  return s;
}

}  // namespace

int VoteCounts::annotator_total() const { return std::accumulate(counts.begin(), counts.end(), 0); }

EmotionDistribution::EmotionDistribution(std::vector<double> p, std::vector<std::string> names)
    : probs(std::move(p)), class_names(std::move(names)) {
  if (!class_names.empty() && class_names.size() != probs.size()) {
    throw DimensionError("distribution has " + std::to_string(probs.size()) + " probs but " +
                         std::to_string(class_names.size()) + " class names");
  }
}

void EmotionDistribution::validate(double tol) const {
  if (probs.empty()) {
    throw ValidationError("empty distribution");
  }
  double s = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValidationError("probability " + std::to_string(p) + " outside [0,1]");
    }
    s += p;
  }
  if (std::abs(s - 1.0) > tol) {
    throw ValidationError("probabilities sum to " + std::to_string(s));
  }
}

double EmotionDistribution::entropy() const {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

std::vector<std::size_t> EmotionDistribution::ranking() const {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return order;
}

EmotionDistribution aggregate_votes(const VoteCounts& votes, std::vector<std::string> class_names) {
  if (votes.counts.size() < 2) {
    throw ValidationError("vote counts need at least 2 classes");
  }
  for (int c : votes.counts) {
    if (c < 0) throw ValidationError("negative vote count");
  }
  const int total = votes.annotator_total();
  if (total == 0) {
    throw EmptyInputError("no annotator selected any class");
  }
  std::vector<double> p(votes.counts.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<double>(votes.counts[i]) / static_cast<double>(total);
  }
  return EmotionDistribution(std::move(p), std::move(class_names));
}

std::vector<double> smooth(std::span<const double> p) {
  std::vector<double> q(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    q[i] = std::clamp(p[i], kProbFloor, 1.0);
    s += q[i];
  }
  for (double& v : q) v /= s;
  return q;
}

double kl_forward(std::span<const double> p_gt, std::span<const double> p_hat) {
  require_same_size(p_gt.size(), p_hat.size(), "kl_forward");
  const auto q = smooth(p_hat);
  return std::max(0.0, kl_raw(p_gt, q));
}

double kl_forward(const EmotionDistribution& p_gt, const EmotionDistribution& p_hat) {
  return kl_forward(p_gt.probs, p_hat.probs);
}

num::Var kl_forward(std::span<const double> p_gt, const num::Var& p_hat) {
  require_same_size(p_gt.size(), num::numel(p_hat.shape()), "kl_forward");
  num::Graph& g = *p_hat.graph();
  // KL = Σ p ln p − Σ p ln q̃ with q̃ = clamp(q)/Σclamp(q).
  const num::Var clamped = num::clamp(p_hat, kProbFloor, 1.0);
  const num::Var q = num::div_scalar(clamped, num::sum(clamped));
  double neg_entropy = 0.0;
  std::vector<double> weights(p_gt.begin(), p_gt.end());
  for (double p : p_gt) {
    if (p > 0.0) neg_entropy += p * std::log(p);
  }
  const num::Var w = g.constant(p_hat.shape(), std::move(weights));
  const num::Var cross = num::sum(num::mul(w, num::log(q)));
  return num::add_scalar(num::scale(cross, -1.0), neg_entropy);
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  require_same_size(p.size(), q.size(), "js_divergence");
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  const double js = 0.5 * kl_raw(p, m) + 0.5 * kl_raw(q, m);
  return std::clamp(js, 0.0, std::log(2.0));
}

double js_divergence(const EmotionDistribution& p, const EmotionDistribution& q) {
  return js_divergence(p.probs, q.probs);
}

double bhattacharyya(std::span<const double> p, std::span<const double> q) {
  require_same_size(p.size(), q.size(), "bhattacharyya");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::sqrt(p[i] * q[i]);
  return std::clamp(s, 0.0, 1.0);
}

double bhattacharyya(const EmotionDistribution& p, const EmotionDistribution& q) {
  return bhattacharyya(p.probs, q.probs);
}

double brier(std::span<const double> p_gt, std::span<const double> p_hat) {
  require_same_size(p_gt.size(), p_hat.size(), "brier");
  double s = 0.0;
  for (std::size_t i = 0; i < p_gt.size(); ++i) s += (p_hat[i] - p_gt[i]) * (p_hat[i] - p_gt[i]);
  return s / static_cast<double>(p_gt.size());
}

double brier(const EmotionDistribution& p_gt, const EmotionDistribution& p_hat) {
  return brier(p_gt.probs, p_hat.probs);
}

double r_squared(std::span<const DistributionPair> pairs) {
  if (pairs.empty()) {
    throw EmptyInputError("r_squared: no pairs");
  }
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [gt, hat] : pairs) {
    require_same_size(gt.size(), hat.size(), "r_squared");
    for (double v : gt.probs) total += v;
    n += gt.size();
  }
  const double mean = total / static_cast<double>(n);
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& [gt, hat] : pairs) {
    for (std::size_t i = 0; i < gt.size(); ++i) {
      ss_res += (gt[i] - hat[i]) * (gt[i] - hat[i]);
      ss_tot += (gt[i] - mean) * (gt[i] - mean);
    }
  }
  if (!(ss_tot > 0.0)) {
    throw ContractError("r_squared: ground truth has zero variance");
  }
  return 1.0 - ss_res / ss_tot;
}

MetricsReport evaluate_batch(std::span<const DistributionPair> pairs) {
  if (pairs.empty()) {
    throw EmptyInputError("evaluate_batch: empty batch");
  }
  MetricsReport r;
  for (const auto& [gt, hat] : pairs) {
    r.js_mean += js_divergence(gt, hat);
    r.bc_mean += bhattacharyya(gt, hat);
    r.brier_mean += brier(gt, hat);
  }
  const double n = static_cast<double>(pairs.size());
  r.js_mean /= n;
  r.bc_mean /= n;
  r.brier_mean /= n;
  r.n = pairs.size();
  try {
    r.r2 = r_squared(pairs);
  } catch (const ContractError&) {
    r.r2 = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

}  // namespace ambig
