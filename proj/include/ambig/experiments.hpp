// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Study designs run by the command-line tool: method comparison, the
// CE-only versus KL ablation, the reasoning/cross-domain ablation and
// gradient checks over the three objectives.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ambig/config.hpp"
#include "ambig/corpus.hpp"
#include "ambig/distributions.hpp"
#include "ambig/numcore.hpp"
#include "ambig/trainer.hpp"

namespace ambig {

// Step and learning-rate budget sized for a single CPU core. The full-scale
// rates in TrainConfig::defaults target adapter fine-tuning of a large model
// and barely move a from-scratch toy policy within minutes.
TrainConfig desk_config(Method method, std::uint64_t seed);

struct ExperimentSpec {
  std::string name;
  std::string profile = "iemocap-like";
  std::vector<std::string> methods;  // "base", or a method name
  std::vector<std::uint64_t> seeds{41, 42, 43};
  std::filesystem::path out_dir;
  // train.* keys applied on top of each run's budget; method and seed keys
  // are owned by the experiment and rejected.
  KeyValueConfig overrides;

  void validate() const;
  // Training config for one run of this experiment.
  TrainConfig run_config(Method method, std::uint64_t seed) const;
};

// Labelled rows by metric columns.
struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  std::vector<std::vector<double>> cells;  // [row][column]

  double at(std::string_view row, std::string_view column) const;
  void add_row(std::string label, std::vector<double> values);

  // "# key: value" header lines, then "label,<columns>" and one line per row.
  std::string to_csv(const std::vector<std::pair<std::string, std::string>>& header = {}) const;
  std::string to_text() const;  // aligned columns for reading
  // Inverse of to_csv; '#' lines are skipped. Throws ParseError.
  static ResultTable parse_csv(std::string_view text);
};

// Metric columns used by every table: js, bc, r2, brier.
const std::vector<std::string>& metric_columns();
std::vector<double> metric_values(const MetricsReport& m);

// Element-wise median over seeds; r2 ignores NaN entries.
MetricsReport median_report(std::span<const MetricsReport> reports);

struct SeedRun {
  std::string label;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

struct ExperimentResult {
  ResultTable table;
  std::vector<SeedRun> runs;

  std::vector<MetricsReport> reports(std::string_view label) const;
};

using Progress = std::function<void(const std::string&)>;

// Rows base, sft, dpo, grpo, grpo_z (those listed in spec.methods); the median
// over seeds of each metric. Base is the untrained policy of each seed.
ExperimentResult run_compare(const ExperimentSpec& spec, const Corpus& corpus, const Progress& progress = {});

// SFT and DPO each with their KL weight at its default and at 0. Rows
// "<method> kl" and "<method> ce-only"; columns js, bc.
ExperimentResult run_ablate_kl(const ExperimentSpec& spec, const Corpus& corpus, const Progress& progress = {});

struct CotAblation {
  ExperimentResult result;
  // Per-seed JS(cot-off) − JS(cot-on), in-domain and cross-domain.
  std::vector<double> in_domain_gap;
  std::vector<double> cross_domain_gap;
};

// SFT with and without reasoning supervision on `in_domain` (six classes),
// scored on its own eval split and on `cross_domain` read out over the
// shared first classes. Rows "cot-on in-domain", "cot-off in-domain",
// "cot-on cross-domain", "cot-off cross-domain".
CotAblation run_ablate_cot(const ExperimentSpec& spec, const Corpus& in_domain, const Corpus& cross_domain,
                           const Progress& progress = {});

// Cross-domain split for the reasoning ablation: a four-class corpus drawn
// with its own seed so no sample is shared with the training profile.
Corpus cross_domain_corpus(std::uint64_t seed);

struct ObjectiveCheck {
  std::string objective;  // sft | dpo | grpo
  num::GradCheckReport report;
  std::vector<std::string> tensor_names;
};

struct GradcheckOptions {
  num::GradCheckOptions check{1e-3, 1e-3, 4, 7};
  // Wraps every loss in an identity op whose backward multiplies the
  // gradient by this factor; anything but 1 must make the check fail.
  double corrupt_scale = 1.0;
  std::uint64_t seed = 42;
};

// Finite-difference checks of sft_loss, dpo_total_loss and grpo_objective on
// the default toy policy (d_model 64, two layers).
std::vector<ObjectiveCheck> run_gradcheck(const GradcheckOptions& options = {});

}  // namespace ambig
