// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit tests.

#pragma once

#include <random>
#include <vector>

#include "ambig/corpus.hpp"
#include "ambig/numcore.hpp"
#include "ambig/policy.hpp"
#include "ambig/rng.hpp"

namespace ambig::testing {

inline num::Tensor random_tensor(num::Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  num::Tensor t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = static_cast<float>(u(rng));
  t.requires_grad = true;
  return t;
}

inline std::vector<double> dirichlet(int n, double alpha, Rng& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  std::vector<double> p(static_cast<std::size_t>(n));
  double s = 0.0;
  for (auto& x : p) s += (x = g(rng));
  for (auto& x : p) x /= s;
  return p;
}

// Small corpus shared by tests that need samples but not training.
inline const Corpus& small_corpus() {
  static const Corpus c = [] {
    CorpusConfig cfg;
    cfg.n_train = 40;
    cfg.n_eval = 12;
    return generate_corpus(cfg);
  }();
  return c;
}

inline PolicyParams toy_policy(const Corpus& corpus, std::uint64_t seed = 42, int d_model = 64, int n_layers = 2) {
  PolicyConfig pc = PolicyConfig::for_vocab(corpus.vocab, corpus.n_classes);
  pc.d_model = d_model;
  pc.n_layers = n_layers;
  return PolicyParams::init(pc, seed);
}

}  // namespace ambig::testing
