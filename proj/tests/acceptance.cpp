// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion AC-1..AC-10, exit status
// 1 when any fails. Training runs are shared between criteria: the DPO runs
// also feed the mining audit and the GRPO_z runs the dominance audit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ambig/config.hpp"
#include "ambig/cot.hpp"
#include "ambig/distributions.hpp"
#include "ambig/experiments.hpp"
#include "ambig/objectives.hpp"
#include "ambig/trainer.hpp"

using namespace ambig;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int failures = 0;

void verdict(const char* id, bool pass, const std::string& detail) {
  std::printf("%s %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

void progress(const std::string& line) {
  std::fprintf(stderr, "  .. %s\n", line.c_str());
  std::fflush(stderr);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---- AC-1 --------------------------------------------------------------------

void ac1() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  auto dev = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  const std::vector<double> p{0.5, 0.3, 0.15, 0.05}, q{0.1, 0.2, 0.3, 0.4};
  const std::vector<double> a{1, 0, 0, 0}, b{0, 1, 0, 0};
  dev(kl_forward(p, p), 0.0);
  dev(js_divergence(p, q), js_divergence(q, p));
  dev(js_divergence(a, b), std::log(2.0));
  dev(js_divergence(p, p), 0.0);
  dev(bhattacharyya(p, p), 1.0);
  dev(bhattacharyya(a, b), 0.0);
  dev(brier(p, p), 0.0);
  const auto agg = aggregate_votes(VoteCounts{{7, 3, 0, 0}});
  for (std::size_t i = 0; i < 4; ++i) dev(agg.probs[i], std::vector<double>{0.7, 0.3, 0, 0}[i]);
  const double js = js_divergence(p, q);
  const bool bounded = js >= 0.0 && js <= std::log(2.0);
  const double t = seconds_since(t0);
  verdict("AC-1", worst <= 1e-9 && bounded && t < 1.0,
          "metric identities, max deviation " + fmt("%.2e", worst) + ", " + fmt("%.3f s", t));
}

// ---- AC-2 --------------------------------------------------------------------

void ac2() {
  const auto t0 = Clock::now();
  const auto checks = run_gradcheck();
  const double t = seconds_since(t0);
  bool pass = checks.size() == 3 && t < 60.0;
  std::string detail;
  for (const auto& c : checks) {
    pass = pass && c.report.passed && c.report.max_rel_error <= 1e-3;
    detail += c.objective + " rel " + fmt("%.2e", c.report.max_rel_error) + (c.report.passed ? "" : " (failed)") + ", ";
  }
  verdict("AC-2", pass, detail + fmt("%.1f s", t));
}

// ---- AC-3 --------------------------------------------------------------------

void ac3() {
  const auto a = normalize_advantages(std::vector<double>{1, 2, 3});
  bool pass = std::abs(a[0] + 1.2247) <= 1e-4 && std::abs(a[1]) <= 1e-4 && std::abs(a[2] - 1.2247) <= 1e-4;
  Rng rng = make_rng({2026, 3});
  std::uniform_real_distribution<double> u(-5, 5), shift(-100, 100);
  int bad = 0;
  for (int g = 0; g < 1000; ++g) {
    std::vector<double> r(2 + rng() % 15);
    for (auto& x : r) x = u(rng);
    const auto adv = normalize_advantages(r);
    const double n = static_cast<double>(adv.size());
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
    double var = 0.0;
    for (double x : adv) var += (x - mean) * (x - mean);
    bool ok = std::abs(mean) <= 1e-6 && std::abs(std::sqrt(var / n) - 1.0) <= 1e-6;
    auto moved = r;
    const double c = shift(rng);
    for (auto& x : moved) x += c;
    const auto adv2 = normalize_advantages(moved);
    for (std::size_t i = 0; i < adv.size(); ++i) ok = ok && std::abs(adv[i] - adv2[i]) <= 1e-6;
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (std::size_t j = 0; j < r.size(); ++j) ok = ok && ((r[i] < r[j]) == (adv[i] < adv[j]));
    }
    bad += !ok;
  }
  pass = pass && bad == 0;
  verdict("AC-3", pass, "advantages [" + fmt("%.4f", a[0]) + ", " + fmt("%.4f", a[1]) + ", " + fmt("%.4f", a[2]) +
                            "], " + std::to_string(bad) + "/1000 groups violating");
}

// ---- AC-9 --------------------------------------------------------------------

void ac9() {
  CorpusConfig cfg;
  cfg.n_train = 1000;
  cfg.n_eval = 0;
  const Corpus c = generate_corpus(cfg);
  int ok = 0;
  for (const auto& s : c.train) {
    const auto parsed = parse_trajectory(s.cot_gt.raw, c.vocab);
    ok += parsed.ok() && *parsed.trajectory == s.cot_gt && format_reward(s.cot_gt.raw, c.vocab) == 1.0 &&
          validate_consistency(s.cot_gt, s.p_gt, c.vocab);
  }
  verdict("AC-9", ok == 1000, std::to_string(ok) + "/1000 trajectories round-trip");
}

// ---- AC-10 -------------------------------------------------------------------

void ac10(const Corpus& corpus) {
  const fs::path dir = fs::temp_directory_path() / "ambig_acceptance_ac10";
  fs::remove_all(dir);
  fs::create_directories(dir);
  bool logs_equal = true, split_equal = true;
  std::string detail;
  for (Method m : {Method::Sft, Method::Dpo, Method::GrpoZ}) {
    TrainConfig c = desk_config(m, 42);
    c.total_steps = 12;
    c.eval_every = 4;
    const TrainResult a = train(corpus, c), b = train(corpus, c);
    logs_equal = logs_equal && step_log_csv(a.log) == step_log_csv(b.log) && a.state == b.state;

    TrainConfig first = c;
    first.stop_after = 5;
    first.checkpoint_path = (dir / "ckpt.bin").string();
    train(corpus, first);
    const TrainState mid = load_checkpoint(dir / "ckpt.bin", corpus, c);
    const TrainResult rest = train(corpus, c, nullptr, &mid);
    split_equal = split_equal && rest.state.params == a.state.params && rest.state.adam == a.state.adam;
    detail += std::string(method_name(m)) + " ";
  }
  fs::remove_all(dir);
  verdict("AC-10", logs_equal && split_equal,
          std::string("step logs ") + (logs_equal ? "bit-identical" : "differ") + ", split run " +
              (split_equal ? "bit-identical" : "differs") + " (" + detail + "12 steps, split at 5)");
}

// ---- training criteria -----------------------------------------------------------

struct Audit {
  // AC-7
  std::size_t groups = 0, eligible = 0, dominance_violations = 0;
  // AC-8
  std::size_t pairs = 0, mining_violations = 0, reports = 0;
};

struct Run {
  MetricsReport metrics;
  double seconds = 0.0;
};

Run run_one(const Corpus& corpus, const TrainConfig& cfg, const std::string& label, Audit* audit) {
  TrainObserver obs;
  if (audit) {
    obs.on_group = [&](int, const RolloutGroup& g, const Sample& s) {
      ++audit->groups;
      if (!g.gt_injected) return;
      const auto& gt = g.readouts.back();
      bool match = gt.size() == s.p_gt.size();
      for (std::size_t i = 0; match && i < gt.size(); ++i) match = std::abs(gt.probs[i] - s.p_gt.probs[i]) <= 1e-6;
      if (!match || format_reward(g.trajectories.back(), corpus.vocab) != 1.0) return;
      ++audit->eligible;
      for (std::size_t k = 0; k + 1 < g.size(); ++k) audit->dominance_violations += g.rewards[k] > g.rewards.back();
    };
    obs.on_mining = [&](int, const Sample& s, const MiningReport& r, const std::optional<PreferencePair>& pair) {
      ++audit->reports;
      const auto best = static_cast<std::size_t>(std::max_element(r.js.begin(), r.js.end()) - r.js.begin());
      const double max_js = r.js[best];
      if (!pair) {
        // A skip is only allowed below τ or when the best rollout is the positive.
        const bool is_pos = r.rollouts[best] == training_target(s, corpus.vocab, cfg.cot_mode);
        audit->mining_violations += max_js >= cfg.tau && !is_pos;
        return;
      }
      ++audit->pairs;
      const bool ok = r.chosen && pair->y_neg == r.rollouts[*r.chosen] && r.js[*r.chosen] == max_js &&
                      pair->neg_js == max_js && pair->neg_js >= cfg.tau;
      audit->mining_violations += !ok;
    };
  }
  const auto t0 = Clock::now();
  const TrainResult res = train(corpus, cfg, audit ? &obs : nullptr);
  Run r{*res.final_eval, seconds_since(t0)};
  progress(label + " seed " + std::to_string(cfg.seed) + ": js " + fmt("%.4f", r.metrics.js_mean) + " bc " +
           fmt("%.4f", r.metrics.bc_mean) + " in " + fmt("%.0f s", r.seconds));
  return r;
}

void training_criteria(const Corpus& corpus) {
  const std::vector<std::uint64_t> seeds{41, 42, 43};
  auto js_of = [](const std::vector<Run>& runs) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.metrics.js_mean);
    return v;
  };

  std::vector<double> base;
  for (auto s : seeds) {
    const TrainConfig c = desk_config(Method::Sft, s);
    base.push_back(evaluate(initial_state(corpus, c).params, corpus.eval, corpus.vocab, c.eval_max_new).js_mean);
  }
  const double base_js = median(base);
  progress("base median js " + fmt("%.4f", base_js));

  Audit audit;
  std::vector<Run> sft, sft_ce, dpo, dpo_ce, grpo;
  for (auto s : seeds) sft.push_back(run_one(corpus, desk_config(Method::Sft, s), "sft", nullptr));
  for (auto s : seeds) {
    TrainConfig c = desk_config(Method::Sft, s);
    c.weights.lambda_sft = 0.0;
    sft_ce.push_back(run_one(corpus, c, "sft ce-only", nullptr));
  }
  for (auto s : seeds) dpo.push_back(run_one(corpus, desk_config(Method::Dpo, s), "dpo", &audit));
  for (auto s : seeds) {
    TrainConfig c = desk_config(Method::Dpo, s);
    c.weights.lambda1 = 0.0;
    dpo_ce.push_back(run_one(corpus, c, "dpo ce-only", &audit));
  }
  for (auto s : seeds) grpo.push_back(run_one(corpus, desk_config(Method::GrpoZ, s), "grpo_z", &audit));

  // AC-4
  double max_seconds = 0.0;
  for (const auto* runs : {&sft, &dpo, &grpo}) {
    for (const auto& r : *runs) max_seconds = std::max(max_seconds, r.seconds);
  }
  bool ac4 = max_seconds < 600.0;
  std::string d4 = "base js " + fmt("%.4f", base_js);
  for (const auto& [name, runs] : {std::pair{"sft", &sft}, {"dpo", &dpo}, {"grpo_z", &grpo}}) {
    const double m = median(js_of(*runs));
    const double reduction = 1.0 - m / base_js;
    ac4 = ac4 && reduction >= 0.30;
    d4 += std::string(", ") + name + " " + fmt("%.4f", m) + " (-" + fmt("%.1f%%", 100 * reduction) + ")";
  }
  verdict("AC-4", ac4, d4 + ", need >= 30%, slowest run " + fmt("%.0f s", max_seconds));

  // AC-5
  const double s_kl = median(js_of(sft)), s_ce = median(js_of(sft_ce));
  const double d_kl = median(js_of(dpo)), d_ce = median(js_of(dpo_ce));
  verdict("AC-5", s_kl <= s_ce && d_kl <= d_ce,
          "sft kl " + fmt("%.4f", s_kl) + " vs ce-only " + fmt("%.4f", s_ce) + ", dpo kl " + fmt("%.4f", d_kl) +
              " vs ce-only " + fmt("%.4f", d_ce));

  // AC-7
  verdict("AC-7", audit.eligible > 0 && audit.dominance_violations == 0,
          std::to_string(audit.eligible) + " eligible groups over 3 full grpo_z runs, " +
              std::to_string(audit.dominance_violations) + " violations");

  // AC-8
  verdict("AC-8", audit.pairs >= 1000 && audit.mining_violations == 0,
          std::to_string(audit.pairs) + " mined pairs from " + std::to_string(audit.reports) + " mining rounds, " +
              std::to_string(audit.mining_violations) + " violations");
}

void ac6() {
  CorpusConfig cc = CorpusConfig::cremad_like();
  cc.seed = 42;
  const Corpus in = generate_corpus(cc);
  const Corpus cross = cross_domain_corpus(4242);
  ExperimentSpec spec;
  spec.name = "acceptance-cot";
  spec.profile = "cremad-like";
  spec.methods = {"sft"};
  const auto r = run_ablate_cot(spec, in, cross, progress);
  const double in_gap = median(r.in_domain_gap), cross_gap = median(r.cross_domain_gap);
  const auto& t = r.result.table;
  verdict("AC-6", cross_gap > in_gap,
          "median js gap (cot-off - cot-on) in-domain " + fmt("%+.4f", in_gap) + ", cross-domain " +
              fmt("%+.4f", cross_gap) + "; js on/off in-domain " + fmt("%.4f", t.at("cot-on in-domain", "js")) + "/" +
              fmt("%.4f", t.at("cot-off in-domain", "js")) + ", cross " +
              fmt("%.4f", t.at("cot-on cross-domain", "js")) + "/" + fmt("%.4f", t.at("cot-off cross-domain", "js")));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  const Corpus corpus = generate_corpus(CorpusConfig{});
  ac1();
  ac2();
  ac3();
  ac9();
  ac10(corpus);
  training_criteria(corpus);
  ac6();
  std::printf("%d of 10 criteria failed, %.0f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
