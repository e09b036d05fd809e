// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include "ambig/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "ambig/errors.hpp"
#include "ambig/objectives.hpp"
#include "ambig/policy.hpp"
#include "ambig/rng.hpp"

namespace ambig {

TrainConfig desk_config(Method method, std::uint64_t seed) {
  TrainConfig c = TrainConfig::defaults(method);
  c.seed = seed;
  switch (method) {
    case Method::Sft:
      c.learning_rate = 2e-3;
      c.total_steps = 300;
      break;
    case Method::Dpo:
      c.learning_rate = 1e-3;
      c.total_steps = 200;
      break;
    case Method::Grpo:
    case Method::GrpoZ:
      c.learning_rate = 3e-3;
      c.total_steps = 120;
      break;
  }
  return c;
}

void ExperimentSpec::validate() const {
  if (methods.empty()) throw ValidationError("experiment '" + name + "' needs at least one method");
  if (seeds.empty()) throw ValidationError("experiment '" + name + "' needs at least one seed");
  for (const auto& m : methods) {
    if (m != "base") parse_method(m);
  }
  CorpusConfig::for_profile(profile);
  for (const char* k : {"train.method", "train.seed"}) {
    if (overrides.has(k)) throw ValidationError(std::string(k) + " is set per run by the experiment");
  }
}

TrainConfig ExperimentSpec::run_config(Method method, std::uint64_t seed) const {
  TrainConfig c = desk_config(method, seed);
  KeyValueConfig train_only;
  for (const auto& [k, v] : overrides.values()) {
    if (k.rfind("train.", 0) == 0) train_only.set(k, v);
  }
  apply(train_only, c);
  return c;
}

// ---- tables ------------------------------------------------------------------

namespace {

std::string fmt_cell(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double ResultTable::at(std::string_view row, std::string_view column) const {
  const auto r = std::find(rows.begin(), rows.end(), row);
  const auto c = std::find(columns.begin(), columns.end(), column);
  if (r == rows.end() || c == columns.end()) {
    throw ContractError("no cell (" + std::string(row) + ", " + std::string(column) + ")");
  }
  return cells[static_cast<std::size_t>(r - rows.begin())][static_cast<std::size_t>(c - columns.begin())];
}

void ResultTable::add_row(std::string label, std::vector<double> values) {
  if (values.size() != columns.size()) throw ContractError("row '" + label + "' has the wrong number of cells");
  rows.push_back(std::move(label));
  cells.push_back(std::move(values));
}

std::string ResultTable::to_csv(const std::vector<std::pair<std::string, std::string>>& header) const {
  std::string out;
  for (const auto& [k, v] : header) out += "# " + k + ": " + v + "\n";
  out += "label";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += rows[r];
    for (double v : cells[r]) out += "," + fmt_cell(v);
    out += "\n";
  }
  return out;
}

std::string ResultTable::to_text() const {
  std::size_t label_w = 5;
  for (const auto& r : rows) label_w = std::max(label_w, r.size());
  std::vector<std::size_t> col_w;
  for (const auto& c : columns) col_w.push_back(std::max<std::size_t>(c.size(), 9));
  auto pad_right = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  auto pad_left = [](const std::string& s, std::size_t w) { return std::string(w - s.size(), ' ') + s; };

  std::string out = pad_right("", label_w);
  for (std::size_t c = 0; c < columns.size(); ++c) out += "  " + pad_left(columns[c], col_w[c]);
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += pad_right(rows[r], label_w);
    for (std::size_t c = 0; c < columns.size(); ++c) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", cells[r][c]);
      out += "  " + pad_left(std::isnan(cells[r][c]) ? "nan" : buf, col_w[c]);
    }
    out += "\n";
  }
  return out;
}

ResultTable ResultTable::parse_csv(std::string_view text) {
  ResultTable t;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_csv(line);
    if (!have_header) {
      if (fields.empty() || fields[0] != "label") throw ParseError(lineno, "label", "expected a header row");
      t.columns.assign(fields.begin() + 1, fields.end());
      have_header = true;
      continue;
    }
    if (fields.size() != t.columns.size() + 1) throw ParseError(lineno, fields[0], "wrong number of cells");
    std::vector<double> values;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (fields[i] == "nan") {
        values.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      try {
        std::size_t used = 0;
        values.push_back(std::stod(fields[i], &used));
        if (used != fields[i].size()) throw ParseError(lineno, t.columns[i - 1], "trailing characters");
      } catch (const std::logic_error&) {
        throw ParseError(lineno, t.columns[i - 1], "not a number: '" + fields[i] + "'");
      }
    }
    t.add_row(fields[0], std::move(values));
  }
  if (!have_header) throw ParseError(lineno, "label", "empty table");
  return t;
}

const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols{"js", "bc", "r2", "brier"};
  return cols;
}

std::vector<double> metric_values(const MetricsReport& m) { return {m.js_mean, m.bc_mean, m.r2, m.brier_mean}; }

MetricsReport median_report(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw EmptyInputError("median over zero reports");
  std::vector<double> js, bc, r2, brier;
  for (const auto& r : reports) {
    js.push_back(r.js_mean);
    bc.push_back(r.bc_mean);
    r2.push_back(r.r2);
    brier.push_back(r.brier_mean);
  }
  return MetricsReport{median(js), median(bc), median(r2), median(brier), reports.front().n};
}

std::vector<MetricsReport> ExperimentResult::reports(std::string_view label) const {
  std::vector<MetricsReport> out;
  for (const auto& r : runs) {
    if (r.label == label) out.push_back(r.metrics);
  }
  return out;
}

// ---- experiments ---------------------------------------------------------------

namespace {

void say(const Progress& progress, const std::string& msg) {
  if (progress) progress(msg);
}

std::string run_line(const std::string& label, std::uint64_t seed, const MetricsReport& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s seed %llu: js %.4f bc %.4f", label.c_str(), static_cast<unsigned long long>(seed),
                m.js_mean, m.bc_mean);
  return buf;
}

MetricsReport train_and_eval(const Corpus& corpus, const TrainConfig& config) {
  const auto res = train(corpus, config);
  if (!res.final_eval) throw ContractError("training stopped before its last step");
  return *res.final_eval;
}

void add_median_row(ExperimentResult& out, const std::string& label, const std::vector<std::string>& columns) {
  const auto med = median_report(out.reports(label));
  const auto all = metric_values(med);
  std::vector<double> picked;
  for (const auto& c : columns) {
    const auto it = std::find(metric_columns().begin(), metric_columns().end(), c);
    picked.push_back(all[static_cast<std::size_t>(it - metric_columns().begin())]);
  }
  out.table.add_row(label, std::move(picked));
}

}  // namespace

ExperimentResult run_compare(const ExperimentSpec& spec, const Corpus& corpus, const Progress& progress) {
  spec.validate();
  if (corpus.eval.empty()) throw EmptyInputError("compare needs a non-empty eval split");
  ExperimentResult out;
  out.table.columns = metric_columns();
  for (const auto& label : spec.methods) {
    for (std::uint64_t seed : spec.seeds) {
      MetricsReport m;
      if (label == "base") {
        const TrainConfig c = spec.run_config(Method::Sft, seed);
        m = evaluate(initial_state(corpus, c).params, corpus.eval, corpus.vocab, c.eval_max_new);
      } else {
        m = train_and_eval(corpus, spec.run_config(parse_method(label), seed));
      }
      say(progress, run_line(label, seed, m));
      out.runs.push_back({label, seed, m});
    }
    add_median_row(out, label, out.table.columns);
  }
  return out;
}

ExperimentResult run_ablate_kl(const ExperimentSpec& spec, const Corpus& corpus, const Progress& progress) {
  spec.validate();
  if (corpus.eval.empty()) throw EmptyInputError("ablate-kl needs a non-empty eval split");
  ExperimentResult out;
  out.table.columns = {"js", "bc"};
  for (Method method : {Method::Sft, Method::Dpo}) {
    for (bool with_kl : {true, false}) {
      const std::string label = std::string(method_name(method)) + (with_kl ? " kl" : " ce-only");
      for (std::uint64_t seed : spec.seeds) {
        TrainConfig c = spec.run_config(method, seed);
        if (!with_kl) (method == Method::Sft ? c.weights.lambda_sft : c.weights.lambda1) = 0.0;
        const auto m = train_and_eval(corpus, c);
        say(progress, run_line(label, seed, m));
        out.runs.push_back({label, seed, m});
      }
      add_median_row(out, label, out.table.columns);
    }
  }
  return out;
}

Corpus cross_domain_corpus(std::uint64_t seed) {
  CorpusConfig c = CorpusConfig::iemocap_like();
  c.seed = seed;
  return generate_corpus(c);
}

CotAblation run_ablate_cot(const ExperimentSpec& spec, const Corpus& in_domain, const Corpus& cross_domain,
                           const Progress& progress) {
  spec.validate();
  if (in_domain.eval.empty() || cross_domain.eval.empty()) throw EmptyInputError("ablate-cot needs eval splits");
  if (cross_domain.n_classes > in_domain.n_classes) {
    throw ValidationError("cross-domain classes must be a subset of the training classes");
  }
  if (!(cross_domain.vocab == in_domain.vocab)) throw ValidationError("both corpora must share one vocabulary");

  CotAblation out;
  out.result.table.columns = metric_columns();
  const char* labels[] = {"cot-on in-domain", "cot-off in-domain", "cot-on cross-domain", "cot-off cross-domain"};
  for (std::uint64_t seed : spec.seeds) {
    MetricsReport in[2], cross[2];
    for (int off = 0; off < 2; ++off) {
      TrainConfig c = spec.run_config(Method::Sft, seed);
      c.cot_mode = off ? CotMode::AnswerOnly : CotMode::Full;
      const auto res = train(in_domain, c);
      in[off] = *res.final_eval;
      cross[off] = evaluate(res.state.params, cross_domain.eval, cross_domain.vocab, c.eval_max_new,
                            cross_domain.n_classes);
      out.result.runs.push_back({labels[off], seed, in[off]});
      out.result.runs.push_back({labels[2 + off], seed, cross[off]});
      say(progress, run_line(labels[off], seed, in[off]));
      say(progress, run_line(labels[2 + off], seed, cross[off]));
    }
    out.in_domain_gap.push_back(in[1].js_mean - in[0].js_mean);
    out.cross_domain_gap.push_back(cross[1].js_mean - cross[0].js_mean);
  }
  for (const char* label : labels) add_median_row(out.result, label, out.result.table.columns);
  return out;
}

// ---- gradient checks -------------------------------------------------------------

namespace {

// Identity whose backward scales the incoming gradient.
num::Var miswired_identity(const num::Var& x, double scale) {
  num::Graph& g = *x.graph();
  const int in = x.id();
  return g.record(num::OpKind::Custom, {in}, x.shape(), std::vector<double>(x.values().begin(), x.values().end()),
                  [in, scale](num::Graph& gr, int self) {
                    const auto& up = gr.upstream(self);
                    auto& dst = gr.grad_buffer(in);
                    for (std::size_t i = 0; i < up.size(); ++i) dst[i] += scale * up[i];
                  });
}

}  // namespace

std::vector<ObjectiveCheck> run_gradcheck(const GradcheckOptions& options) {
  CorpusConfig cc;
  cc.n_train = 4;
  cc.n_eval = 1;
  cc.seed = options.seed;
  const Corpus corpus = generate_corpus(cc);
  const Vocabulary& vocab = corpus.vocab;
  const Sample& sample = corpus.train.front();

  TrainConfig tc;
  tc.seed = options.seed;
  PolicyParams params = initial_state(corpus, tc).params;
  const PolicyParams ref = params.clone();
  params.set_trainable(true);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < params.count(); ++i) names.push_back(params.name(i));

  LossWeights weights;
  Rng rng = make_rng({options.seed, 0x6772616463686bULL});
  const RolloutOptions short_rollouts{1.0, 12};

  const auto prompt = build_prompt(sample, vocab);
  const PreferencePair pair{prompt, sample.cot_gt.raw,
                            sample_trajectory(ref, prompt, short_rollouts.temperature, short_rollouts.max_new, rng),
                            0.0};
  RolloutGroup group = build_group(ref, sample, vocab, 3, weights, rng, short_rollouts);
  inject_gt_trajectory(group, sample, ref, vocab, weights);
  // Nudge the live policy off the sampling snapshot so ratios differ from 1
  // without leaving the clip interval.
  for (auto* t : params.tensors()) {
    for (auto& v : t->data) v *= 1.01f;
  }
  const std::vector<RolloutGroup> groups{group};

  auto wrap = [&](num::Var loss) {
    return options.corrupt_scale == 1.0 ? loss : miswired_identity(loss, options.corrupt_scale);
  };
  const std::vector<std::pair<std::string, std::function<num::Var(num::Graph&)>>> objectives{
      {"sft", [&](num::Graph& g) { return wrap(sft_loss(g, params, sample, vocab, weights)); }},
      {"dpo", [&](num::Graph& g) { return wrap(dpo_total_loss(g, params, ref, pair, sample, vocab, weights)); }},
      {"grpo", [&](num::Graph& g) { return wrap(grpo_objective(g, params, ref, groups, weights, true)); }},
  };

  std::vector<ObjectiveCheck> out;
  auto tensors = params.tensors();
  for (const auto& [name, fn] : objectives) {
    out.push_back({name, num::grad_check(fn, tensors, options.check), names});
  }
  return out;
}

}  // namespace ambig
