// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy decoder-only transformer (pre-LN, learned positions, GELU MLP) that
// writes reasoning trajectories and exposes a distributional emotion readout:
// the softmax of the class-token logits at the position of the answer marker.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ambig/distributions.hpp"
#include "ambig/numcore.hpp"
#include "ambig/rng.hpp"
#include "ambig/vocabulary.hpp"

namespace ambig {

struct PolicyConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ff_mult = 4;
  int max_len = 256;
  std::vector<int> class_token_ids;
  int answer_marker_id = -1;
  int eoa_id = -1;

  void validate() const;
  // Defaults sized for the built-in vocabulary and its first `n_classes` classes.
  static PolicyConfig for_vocab(const Vocabulary& vocab, int n_classes);
  bool operator==(const PolicyConfig&) const = default;
};

// Named parameter tensors. A plain value type: copies are deep, so clones
// for the reference and sampling snapshots never alias the live weights.
class PolicyParams {
 public:
  PolicyParams() = default;
  // Zero-filled tensors with the right shapes.
  explicit PolicyParams(PolicyConfig config);
  // Normal(0, 0.02) weights, zero biases, unit layer-norm gains.
  static PolicyParams init(const PolicyConfig& config, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  std::size_t count() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  num::Tensor& tensor(std::size_t i) { return tensors_.at(i); }
  const num::Tensor& tensor(std::size_t i) const { return tensors_.at(i); }
  num::Tensor& get(const std::string& name);
  const num::Tensor& get(const std::string& name) const;
  std::vector<num::Tensor*> tensors();
  std::size_t num_parameters() const;

  PolicyParams clone() const { return *this; }
  void zero_grad();
  void set_trainable(bool on);
  // FNV-1a over names, shapes and raw float bits.
  std::uint64_t checksum() const;

  bool operator==(const PolicyParams&) const = default;

 private:
  void add(const std::string& name, num::Shape shape);

  PolicyConfig config_;
  std::vector<std::string> names_;
  std::vector<num::Tensor> tensors_;
};

// How parameters enter a graph: Train binds them as gradient sinks (when
// requires_grad is set), Frozen as constants.
enum class Bind { Train, Frozen };

// Logits [T × vocab_size]; row t only sees tokens 0..t.
num::Var forward_logits(num::Graph& g, PolicyParams& params, std::span<const int> tokens, Bind bind = Bind::Train);
// Flat row-major copy of the same logits without recording gradients.
std::vector<double> forward_logits(const PolicyParams& params, std::span<const int> tokens);

// Per-token log-probabilities [n] of `continuation` after `prompt` given
// logits over prompt ++ continuation.
num::Var continuation_log_probs(const num::Var& logits, std::size_t prompt_len, std::span<const int> continuation);
num::Var sequence_log_prob(num::Graph& g, PolicyParams& params, std::span<const int> prompt,
                           std::span<const int> continuation, Bind bind = Bind::Train);
std::vector<double> sequence_log_prob(const PolicyParams& params, std::span<const int> prompt,
                                      std::span<const int> continuation);

// Position in prompt ++ trajectory whose logits feed the readout: the first
// answer marker of the trajectory, otherwise the last position.
std::size_t readout_position(std::span<const int> prompt, std::span<const int> trajectory, const Vocabulary& vocab);

// Softmax over `class_ids` columns of logits row `pos`, shape [C].
num::Var emotion_readout(const num::Var& logits, std::size_t pos, std::span<const int> class_ids);
num::Var emotion_readout(num::Graph& g, PolicyParams& params, std::span<const int> prompt,
                         std::span<const int> trajectory, const Vocabulary& vocab, Bind bind = Bind::Train);
// `class_ids` defaults to the configured class tokens; a prefix of them reads
// out a smaller label set (used for cross-domain evaluation).
EmotionDistribution emotion_readout(const PolicyParams& params, std::span<const int> prompt,
                                    std::span<const int> trajectory, const Vocabulary& vocab,
                                    std::span<const int> class_ids = {});

// Per-token log-probabilities and readout of one trajectory in a single
// incremental pass; no gradients.
struct TrajectoryScore {
  std::vector<double> log_probs;
  EmotionDistribution readout;
};
TrajectoryScore score_trajectory(const PolicyParams& params, std::span<const int> prompt,
                                 std::span<const int> trajectory, const Vocabulary& vocab);

// Incremental forward pass with a key/value cache; numerically the same as
// forward_logits, one position at a time.
class Decoder {
 public:
  explicit Decoder(const PolicyParams& params);

  // Appends `token` and returns the logits at its position.
  std::span<const double> step(int token);
  void reset();
  std::size_t length() const { return len_; }

 private:
  struct Layer {
    std::vector<double> ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    std::vector<double> keys, values;  // [max_len × d]
  };
  PolicyConfig cfg_;
  std::vector<double> tok_emb_, pos_emb_, lnf_g_, lnf_b_, head_;
  std::vector<Layer> layers_;
  std::vector<double> logits_;
  std::size_t len_ = 0;
};

// Ancestral sampling from softmax(logits / temperature). Stops after <eoa>,
// after max_new tokens, or when the context is full.
std::vector<int> sample_trajectory(const PolicyParams& params, std::span<const int> prompt, double temperature,
                                   int max_new, Rng& rng);
std::vector<int> greedy_decode(const PolicyParams& params, std::span<const int> prompt, int max_new);

}  // namespace ambig
