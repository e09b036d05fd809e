// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Training orchestration for the four methods, AdamW with linear warmup and
// cosine decay, evaluation and checkpoints.
//
// All randomness is derived from (seed, purpose, counter, slot), and the
// data stream is a per-epoch seeded shuffle addressed by a global cursor, so
// a run stopped, checkpointed and resumed produces the same parameters as an
// uninterrupted one.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ambig/corpus.hpp"
#include "ambig/distributions.hpp"
#include "ambig/objectives.hpp"
#include "ambig/policy.hpp"

namespace ambig {

enum class Method { Sft, Dpo, Grpo, GrpoZ };

const char* method_name(Method m);
Method parse_method(const std::string& name);  // sft | dpo | grpo | grpo_z

struct TrainConfig {
  Method method = Method::Sft;
  double learning_rate = 1e-4;
  int total_steps = 2000;  // optimizer steps; one per outer iteration for GRPO
  double warmup_fraction = 0.03;
  int batch_size = 8;
  LossWeights weights;
  std::uint64_t seed = 42;
  int eval_every = 0;  // 0: evaluate only after the last step
  std::string checkpoint_path;

  // Policy size.
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;

  CotMode cot_mode = CotMode::Full;
  RolloutOptions rollout;
  int n_rollouts = 4;         // DPO mining candidates per sample
  double tau = 0.1;           // DPO minimum negative JS
  int group_size = 4;         // GRPO K
  bool gt_in_update = true;   // GRPO_z: injected member also receives gradient
  int eval_max_new = 64;

  // Stop once this many steps are done (-1: run to total_steps). The
  // schedule still spans total_steps, so a stopped run can be resumed.
  int stop_after = -1;

  void validate() const;
  // Per-method learning rate and step defaults.
  static TrainConfig defaults(Method method);
};

// Linear 0 → peak over ⌈warmup_fraction·total⌉ steps, then cosine to 0.
double lr_at(int step, const TrainConfig& config);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::int64_t t = 0;

  bool operator==(const AdamState&) const = default;
};

// One AdamW update with bias correction and decoupled weight decay. Throws
// NumericError naming the first tensor whose gradient is not finite, before
// touching any parameter.
void step_optimizer(std::span<num::Tensor* const> params, std::span<const std::string> names, AdamState& state,
                    double lr, const AdamOptions& options = {});
void step_optimizer(PolicyParams& params, AdamState& state, double lr, const AdamOptions& options = {});

// Everything needed to continue a run.
struct TrainState {
  PolicyParams params;
  PolicyParams ref;
  AdamState adam;
  int step = 0;                 // optimizer steps taken
  std::uint64_t iteration = 0;  // attempts, including skipped DPO steps
  std::uint64_t cursor = 0;     // samples drawn from the data stream

  bool operator==(const TrainState&) const = default;
};

PolicyConfig policy_config(const Corpus& corpus, const TrainConfig& config);
// Fresh policy from config.seed; the reference snapshot is a copy of it.
TrainState initial_state(const Corpus& corpus, const TrainConfig& config);

struct StepRecord {
  int step = 0;
  Method method = Method::Sft;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<MetricsReport> eval;
  std::string note;  // e.g. skip reasons
};

// Observer hooks; each may be empty.
struct TrainObserver {
  std::function<void(int step, const RolloutGroup&, const Sample&)> on_group;
  std::function<void(int step, const Sample&, const MiningReport&, const std::optional<PreferencePair>&)> on_mining;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<StepRecord> log;
  std::optional<MetricsReport> final_eval;
  int skipped_samples = 0;
};

// Runs until total_steps (or stop_after). Starts from `resume` when given.
// Writes a checkpoint to config.checkpoint_path when it is set.
TrainResult train(const Corpus& corpus, const TrainConfig& config, const TrainObserver* observer = nullptr,
                  const TrainState* resume = nullptr);

// Greedy-decodes each sample, reads out the first `n_classes` classes
// (default: the samples' own class count) and scores against p_gt.
MetricsReport evaluate(const PolicyParams& params, std::span<const Sample> samples, const Vocabulary& vocab,
                       int max_new = 64, int n_classes = 0);
MetricsReport evaluate(const std::function<EmotionDistribution(const Sample&)>& predictor,
                       std::span<const Sample> samples);

// step,method,loss,lr,js,bc,r2,brier,note; eval columns empty on non-eval rows.
std::string step_log_csv(std::span<const StepRecord> log, const std::string& header_comment = {});

// Binary checkpoint: "AMBCKPT1", version, config digest, counters, then an
// index of named float32 little-endian arrays (parameters, moments, reference).
void save_checkpoint(const TrainState& state, const TrainConfig& config, const std::filesystem::path& path);
// Throws ValidationError when the checkpoint was written under a different config.
TrainState load_checkpoint(const std::filesystem::path& path, const Corpus& corpus, const TrainConfig& config);

}  // namespace ambig
