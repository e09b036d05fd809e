// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// ambig: corpus generation, training, evaluation and the study designs.
//
// Exit codes: 0 success, 1 invalid input (flags, config, data, failed
// gradient check), 2 runtime or I/O failure.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ambig/config.hpp"
#include "ambig/corpus.hpp"
#include "ambig/errors.hpp"
#include "ambig/experiments.hpp"
#include "ambig/trainer.hpp"

namespace fs = std::filesystem;
using namespace ambig;

namespace {

constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Flags shared by train and eval: together with the config file they
// resolve the training config whose digest a checkpoint must match.
struct TrainFlags {
  std::string corpus;
  std::string method = "sft";
  std::string budget = "desk";
  std::optional<int> steps;
  std::optional<double> lr;
  std::optional<int> batch;
  std::optional<std::string> cot;
  std::optional<int> eval_every;
  std::optional<int> stop_after;
};

KeyValueConfig load_kv(const Globals& g) {
  return g.config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(g.config_path);
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream os(path, std::ios::binary);
  if (!os || !(os << content)) throw IoError("cannot write " + path.string());
}

void require_dir(const std::string& dir, const char* what) {
  if (dir.empty()) throw ValidationError(std::string(what) + " is required");
  if (!fs::is_directory(dir)) throw IoError(std::string(what) + " '" + dir + "' does not exist");
}

void emit_table(const ResultTable& table, const std::string& name, const Globals& g, const std::string& digest) {
  std::cout << "# config_digest: " << digest << "\n" << table.to_text();
  if (g.out.empty()) return;
  const fs::path dir(g.out);
  write_file(dir / (name + ".csv"), table.to_csv({{"table", name}, {"config_digest", digest}}));
  write_file(dir / (name + ".txt"), "# table: " + name + "\n# config_digest: " + digest + "\n" + table.to_text());
}

TrainConfig resolve_train(const Globals& g, const TrainFlags& f) {
  const Method method = parse_method(f.method);
  TrainConfig c = f.budget == "full" ? TrainConfig::defaults(method) : desk_config(method, 42);
  if (f.budget != "full" && f.budget != "desk") throw ValidationError("--budget must be desk or full");
  KeyValueConfig kv = load_kv(g);
  kv.erase("train.method");
  apply(kv, c);
  if (g.seed) c.seed = *g.seed;
  if (f.steps) c.total_steps = *f.steps;
  if (f.lr) c.learning_rate = *f.lr;
  if (f.batch) c.batch_size = *f.batch;
  if (f.cot) {
    if (*f.cot != "full" && *f.cot != "answer") throw ValidationError("--cot must be full or answer");
    c.cot_mode = *f.cot == "full" ? CotMode::Full : CotMode::AnswerOnly;
  }
  if (f.eval_every) c.eval_every = *f.eval_every;
  if (f.stop_after) c.stop_after = *f.stop_after;
  c.validate();
  return c;
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--corpus", f.corpus, "Corpus directory written by gen-corpus")->required();
  cmd->add_option("--method", f.method, "sft | dpo | grpo | grpo_z");
  cmd->add_option("--budget", f.budget, "desk (single-core step budget) or full (adapter-scale rates and steps)");
  cmd->add_option("--steps", f.steps, "Total optimizer steps");
  cmd->add_option("--lr", f.lr, "Peak learning rate");
  cmd->add_option("--batch", f.batch, "Samples per step");
  cmd->add_option("--cot", f.cot, "full (reasoning trajectory) or answer (answer section only)");
  cmd->add_option("--eval-every", f.eval_every, "Evaluate every N steps (0: only at the end)");
  cmd->add_option("--stop-after", f.stop_after, "Stop after N steps; the schedule still spans --steps");
}

void print_summary(const char* split, const CorpusSummary& s, const Vocabulary& vocab, int n_classes) {
  std::printf("%s: %zu samples, mean GT entropy %.4f nats\n", split, s.n, s.mean_entropy);
  const auto names = vocab.class_names(n_classes);
  std::printf("  votes per class:");
  for (int c = 0; c < n_classes; ++c) std::printf(" %s=%d", names[c].c_str(), s.class_votes[c]);
  std::printf("\n  samples by voted classes:");
  for (std::size_t k = 1; k < s.support_histogram.size(); ++k) std::printf(" %zu:%d", k, s.support_histogram[k]);
  std::printf("\n");
}

// ---- commands -----------------------------------------------------------------

struct GenFlags {
  std::optional<std::string> profile;
  std::optional<int> classes, n_train, n_eval;
};

int cmd_gen_corpus(const Globals& g, const GenFlags& f) {
  if (g.out.empty()) throw ValidationError("--out is required");
  const KeyValueConfig kv = load_kv(g);
  CorpusConfig c = CorpusConfig::for_profile(f.profile.value_or(kv.has("corpus.profile") ? kv.get("corpus.profile") : "iemocap-like"));
  apply(kv, c);
  if (f.profile) {
    const auto seed = c.seed;
    c = CorpusConfig::for_profile(*f.profile);
    c.seed = seed;
  }
  if (g.seed) c.seed = *g.seed;
  if (f.classes) c.n_classes = *f.classes;
  if (f.n_train) c.n_train = *f.n_train;
  if (f.n_eval) c.n_eval = *f.n_eval;
  c.validate();  // before anything touches the disk

  const std::string digest = describe(c).digest();
  const Corpus corpus = generate_corpus(c);
  save_corpus(corpus, g.out, digest);
  std::printf("# config_digest: %s\nwrote %s (profile %s, %d classes)\n", digest.c_str(), g.out.c_str(),
              corpus.profile.c_str(), corpus.n_classes);
  print_summary("train", summarize(corpus.train, corpus.n_classes), corpus.vocab, corpus.n_classes);
  print_summary("eval", summarize(corpus.eval, corpus.n_classes), corpus.vocab, corpus.n_classes);
  return 0;
}

int cmd_train(const Globals& g, const TrainFlags& f, const std::string& resume) {
  require_dir(f.corpus, "--corpus");
  TrainConfig c = resolve_train(g, f);
  const Corpus corpus = load_corpus(f.corpus);
  if (!g.out.empty()) c.checkpoint_path = (fs::path(g.out) / "checkpoint.bin").string();
  const std::string digest = config_digest(c);

  std::optional<TrainState> start;
  if (!resume.empty()) start = load_checkpoint(resume, corpus, c);

  TrainObserver obs;
  obs.on_step = [](const StepRecord& r) {
    if (r.eval) {
      std::printf("step %d loss %.4f lr %.3g js %.4f bc %.4f\n", r.step, r.loss, r.lr, r.eval->js_mean, r.eval->bc_mean);
    } else if (!r.note.empty()) {
      std::printf("step %d %s\n", r.step, r.note.c_str());
    }
    std::fflush(stdout);
  };
  std::printf("# config_digest: %s\ntraining %s for %d steps at lr %.3g\n", digest.c_str(), method_name(c.method),
              c.total_steps, c.learning_rate);
  const TrainResult res = train(corpus, c, &obs, start ? &*start : nullptr);

  if (!g.out.empty()) {
    write_file(fs::path(g.out) / "steps.csv", step_log_csv(res.log, "config_digest: " + digest));
  }
  if (res.final_eval) {
    ResultTable t;
    t.columns = metric_columns();
    t.add_row(method_name(c.method), metric_values(*res.final_eval));
    emit_table(t, "metrics", g, digest);
  } else {
    std::printf("stopped at step %d of %d\n", res.state.step, c.total_steps);
  }
  return 0;
}

int cmd_eval(const Globals& g, const TrainFlags& f, const std::string& checkpoint, int max_new) {
  require_dir(f.corpus, "--corpus");
  const TrainConfig c = resolve_train(g, f);
  const Corpus corpus = load_corpus(f.corpus);
  const std::string digest = config_digest(c);
  const TrainState st = checkpoint.empty() ? initial_state(corpus, c) : load_checkpoint(checkpoint, corpus, c);
  ResultTable t;
  t.columns = metric_columns();
  t.add_row(checkpoint.empty() ? "base" : method_name(c.method),
            metric_values(evaluate(st.params, corpus.eval, corpus.vocab, max_new)));
  emit_table(t, "eval", g, digest);
  return 0;
}

struct StudyFlags {
  std::string corpus;
  std::vector<std::string> methods{"base", "sft", "dpo", "grpo", "grpo_z"};
  std::vector<std::uint64_t> seeds{41, 42, 43};
  std::uint64_t cross_seed = 4242;
};

ExperimentSpec make_spec(const Globals& g, const StudyFlags& f, const std::string& name, const Corpus& corpus) {
  ExperimentSpec s;
  s.name = name;
  s.profile = corpus.profile;
  s.methods = f.methods;
  s.seeds = f.seeds;
  s.out_dir = g.out;
  const KeyValueConfig kv = load_kv(g);
  for (const auto& [k, v] : kv.values()) {
    if (k.rfind("train.", 0) == 0) s.overrides.set(k, v);
  }
  s.validate();
  return s;
}

std::string spec_digest(const ExperimentSpec& s, const Corpus& corpus) {
  KeyValueConfig kv;
  kv.set("experiment.name", s.name);
  std::string methods, seeds;
  for (const auto& m : s.methods) methods += (methods.empty() ? "" : ",") + m;
  for (auto seed : s.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(seed);
  kv.set("experiment.methods", methods);
  kv.set("experiment.seeds", seeds);
  kv.set("corpus.profile", corpus.profile);
  kv.set("corpus.n_classes", std::to_string(corpus.n_classes));
  kv.set("corpus.n_train", std::to_string(corpus.train.size()));
  kv.set("corpus.n_eval", std::to_string(corpus.eval.size()));
  for (Method m : {Method::Sft, Method::Dpo, Method::Grpo, Method::GrpoZ}) {
    const KeyValueConfig resolved = describe(s.run_config(m, 0));
    for (const auto& [k, v] : resolved.values()) {
      if (k != "train.seed") kv.set(std::string(method_name(m)) + "." + k, v);
    }
  }
  return kv.digest();
}

void progress_line(const std::string& msg) {
  std::printf("  %s\n", msg.c_str());
  std::fflush(stdout);
}

int cmd_compare(const Globals& g, const StudyFlags& f) {
  require_dir(f.corpus, "--corpus");
  const Corpus corpus = load_corpus(f.corpus);
  const ExperimentSpec spec = make_spec(g, f, "compare", corpus);
  const auto result = run_compare(spec, corpus, progress_line);
  emit_table(result.table, "compare", g, spec_digest(spec, corpus));
  return 0;
}

int cmd_ablate_kl(const Globals& g, const StudyFlags& f) {
  require_dir(f.corpus, "--corpus");
  const Corpus corpus = load_corpus(f.corpus);
  const ExperimentSpec spec = make_spec(g, f, "ablate_kl", corpus);
  const auto result = run_ablate_kl(spec, corpus, progress_line);
  emit_table(result.table, "ablate_kl", g, spec_digest(spec, corpus));
  return 0;
}

int cmd_ablate_cot(const Globals& g, const StudyFlags& f) {
  require_dir(f.corpus, "--corpus");
  const Corpus corpus = load_corpus(f.corpus);
  if (corpus.n_classes <= 4) {
    throw ValidationError("ablate-cot trains on a corpus with more than 4 classes (e.g. the cremad-like profile)");
  }
  const Corpus cross = cross_domain_corpus(f.cross_seed);
  const ExperimentSpec spec = make_spec(g, f, "ablate_cot", corpus);
  const auto out = run_ablate_cot(spec, corpus, cross, progress_line);
  // The cross-domain seed is part of what the table depends on.
  ExperimentSpec digest_spec = spec;
  digest_spec.name += " cross_seed=" + std::to_string(f.cross_seed);
  emit_table(out.result.table, "ablate_cot", g, spec_digest(digest_spec, corpus));
  std::printf("JS gap (cot-off minus cot-on) per seed, in-domain / cross-domain:\n");
  for (std::size_t i = 0; i < out.in_domain_gap.size(); ++i) {
    std::printf("  seed %llu: %+.4f / %+.4f\n", static_cast<unsigned long long>(spec.seeds[i]), out.in_domain_gap[i],
                out.cross_domain_gap[i]);
  }
  return 0;
}

int cmd_gradcheck(const Globals& g, double corrupt_scale) {
  GradcheckOptions o;
  if (g.seed) o.seed = *g.seed;
  o.corrupt_scale = corrupt_scale;
  const auto checks = run_gradcheck(o);
  bool ok = true;
  std::string report;
  char buf[256];
  for (const auto& c : checks) {
    const auto& r = c.report;
    std::snprintf(buf, sizeof buf, "%-5s %s  max rel %.3e over %zu coords", c.objective.c_str(),
                  r.passed ? "PASS" : "FAIL", r.max_rel_error, r.coords_checked);
    report += buf;
    if (!r.passed) {
      std::snprintf(buf, sizeof buf, "; worst %s[%zu] analytic %.6g numeric %.6g", c.tensor_names[r.worst_tensor].c_str(),
                    r.worst_index, r.worst_analytic, r.worst_numeric);
      report += buf;
    }
    report += "\n";
    ok = ok && r.passed;
  }
  std::cout << report;
  if (!g.out.empty()) write_file(fs::path(g.out) / "gradcheck.txt", report);
  return ok ? 0 : kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ambiguity-aware emotion reasoning: corpora, training and studies", "ambig"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "key = value config file (corpus.* and train.* keys)");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output directory");

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic corpus");
  gen_cmd->add_option("--profile", gen.profile, "iemocap-like | cremad-like");
  gen_cmd->add_option("--classes", gen.classes, "Number of emotion classes");
  gen_cmd->add_option("--train", gen.n_train, "Training samples");
  gen_cmd->add_option("--eval", gen.n_eval, "Evaluation samples");

  TrainFlags train_flags;
  std::string resume;
  auto* train_cmd = app.add_subcommand("train", "Train one policy");
  add_train_flags(train_cmd, train_flags);
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from");

  TrainFlags eval_flags;
  std::string checkpoint;
  int max_new = 64;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (or the untrained policy)");
  add_train_flags(eval_cmd, eval_flags);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by train");
  eval_cmd->add_option("--max-new", max_new, "Decoding budget per sample");

  StudyFlags study;
  auto add_study = [&](const char* name, const char* help, bool methods, bool cross) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("--corpus", study.corpus, "Corpus directory")->required();
    cmd->add_option("--seeds", study.seeds, "Seeds (median over these)")->delimiter(',');
    if (methods) cmd->add_option("--methods", study.methods, "Rows: base,sft,dpo,grpo,grpo_z")->delimiter(',');
    if (cross) cmd->add_option("--cross-seed", study.cross_seed, "Seed of the cross-domain split");
    return cmd;
  };
  auto* compare_cmd = add_study("compare", "Method comparison table", true, false);
  auto* kl_cmd = add_study("ablate-kl", "CE-only versus KL supervision for SFT and DPO", false, false);
  auto* cot_cmd = add_study("ablate-cot", "Reasoning supervision, in-domain and cross-domain", false, true);

  double corrupt_scale = 1.0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of the three objectives");
  grad_cmd->add_option("--corrupt-scale", corrupt_scale, "Scale injected into the backward pass (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_corpus(g, gen);
    if (train_cmd->parsed()) return cmd_train(g, train_flags, resume);
    if (eval_cmd->parsed()) return cmd_eval(g, eval_flags, checkpoint, max_new);
    if (compare_cmd->parsed()) return cmd_compare(g, study);
    if (kl_cmd->parsed()) return cmd_ablate_kl(g, study);
    if (cot_cmd->parsed()) return cmd_ablate_cot(g, study);
    if (grad_cmd->parsed()) return cmd_gradcheck(g, corrupt_scale);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitRuntime;
}
