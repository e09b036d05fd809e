// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "ambig/cot.hpp"
#include "ambig/errors.hpp"
#include "ambig/experiments.hpp"
#include "helpers.hpp"

using namespace ambig;
using ambig::testing::small_corpus;

namespace {

KeyValueConfig tiny_overrides() {
  return KeyValueConfig::parse(
      "train.total_steps = 2\ntrain.batch_size = 2\ntrain.d_model = 16\ntrain.n_layers = 1\n"
      "train.eval_max_new = 8\ntrain.max_new = 12\ntrain.group_size = 2\ntrain.n_rollouts = 2\n");
}

Corpus tiny_corpus(const char* profile, std::uint64_t seed) {
  CorpusConfig c = CorpusConfig::for_profile(profile);
  c.n_train = 12;
  c.n_eval = 4;
  c.seed = seed;
  return generate_corpus(c);
}

}  // namespace

TEST_SUITE("experiments") {
  TEST_CASE("desk budgets") {
    CHECK(desk_config(Method::Sft, 41).total_steps == 300);
    CHECK(desk_config(Method::Dpo, 41).total_steps == 200);
    CHECK(desk_config(Method::GrpoZ, 41).total_steps == 120);
    CHECK(desk_config(Method::Grpo, 43).seed == 43);
    CHECK(desk_config(Method::Dpo, 41).weights == LossWeights{});
  }

  TEST_CASE("experiment specs") {
    ExperimentSpec s;
    s.name = "t";
    s.methods = {"base", "sft"};
    s.overrides = tiny_overrides();
    CHECK_NOTHROW(s.validate());
    const TrainConfig c = s.run_config(Method::Dpo, 43);
    CHECK(c.method == Method::Dpo);
    CHECK(c.seed == 43);
    CHECK(c.total_steps == 2);
    CHECK(c.learning_rate == desk_config(Method::Dpo, 43).learning_rate);
    s.methods = {"ppo"};
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.methods = {};
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.methods = {"sft"};
    s.overrides.set("train.seed", "1");
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }

  TEST_CASE("result tables round-trip through CSV") {
    ResultTable t;
    t.columns = {"js", "r2"};
    t.add_row("sft", {0.125, std::numeric_limits<double>::quiet_NaN()});
    t.add_row("dpo", {0.25, -0.5});
    CHECK(t.at("dpo", "r2") == -0.5);
    CHECK_THROWS(t.at("grpo", "js"));
    CHECK_THROWS(t.at("sft", "bc"));
    CHECK_THROWS(t.add_row("bad", {1.0}));
    const std::string csv = t.to_csv({{"config_digest", "abc"}});
    CHECK(csv.rfind("# config_digest: abc\nlabel,js,r2\n", 0) == 0);
    const ResultTable back = ResultTable::parse_csv(csv);
    CHECK(back.columns == t.columns);
    CHECK(back.rows == t.rows);
    CHECK(back.at("sft", "js") == 0.125);
    CHECK(std::isnan(back.at("sft", "r2")));
    CHECK(t.to_text().find("sft") != std::string::npos);
    CHECK_THROWS_AS(ResultTable::parse_csv("js,bc\n"), ParseError);
    CHECK_THROWS_AS(ResultTable::parse_csv("label,js\nsft,1,2\n"), ParseError);
    CHECK_THROWS_AS(ResultTable::parse_csv("label,js\nsft,abc\n"), ParseError);
  }

  TEST_CASE("medians over seeds") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const std::vector<MetricsReport> r{{0.3, 0.7, 0.1, 0.2, 5}, {0.1, 0.9, nan, 0.4, 5}, {0.2, 0.8, 0.3, 0.3, 5}};
    const auto m = median_report(r);
    CHECK(m.js_mean == 0.2);
    CHECK(m.bc_mean == 0.8);
    CHECK(m.r2 == doctest::Approx(0.2));
    CHECK(m.brier_mean == 0.3);
    CHECK(median_report(std::vector<MetricsReport>{r[0], r[1]}).js_mean == doctest::Approx(0.2));
    CHECK_THROWS_AS(median_report(std::vector<MetricsReport>{}), EmptyInputError);
    CHECK(metric_columns() == std::vector<std::string>{"js", "bc", "r2", "brier"});
    CHECK(metric_values(r[0]) == std::vector<double>{0.3, 0.7, 0.1, 0.2});
  }

  TEST_CASE("compare with only the untrained policy") {
    ExperimentSpec s;
    s.name = "base";
    s.methods = {"base"};
    s.seeds = {41, 42};
    s.overrides = tiny_overrides();
    const Corpus& c = small_corpus();
    std::vector<std::string> lines;
    const auto r = run_compare(s, c, [&](const std::string& l) { lines.push_back(l); });
    CHECK(r.table.rows == std::vector<std::string>{"base"});
    CHECK(r.runs.size() == 2);
    CHECK(lines.size() == 2);
    const TrainConfig cfg = s.run_config(Method::Sft, 41);
    const auto direct = evaluate(initial_state(c, cfg).params, c.eval, c.vocab, cfg.eval_max_new);
    CHECK(r.runs[0].metrics.js_mean == direct.js_mean);
  }

  TEST_CASE("KL ablation layout") {
    ExperimentSpec s;
    s.name = "kl";
    s.methods = {"sft"};
    s.seeds = {41};
    s.overrides = tiny_overrides();
    const auto r = run_ablate_kl(s, tiny_corpus("iemocap-like", 3));
    CHECK(r.table.rows == std::vector<std::string>{"sft kl", "sft ce-only", "dpo kl", "dpo ce-only"});
    CHECK(r.table.columns == std::vector<std::string>{"js", "bc"});
    CHECK(r.runs.size() == 4);
  }

  TEST_CASE("reasoning ablation layout") {
    ExperimentSpec s;
    s.name = "cot";
    s.methods = {"sft"};
    s.seeds = {41, 42};
    s.overrides = tiny_overrides();
    const Corpus in = tiny_corpus("cremad-like", 5);
    const Corpus cross = tiny_corpus("iemocap-like", 6);
    const auto r = run_ablate_cot(s, in, cross);
    CHECK(r.result.table.rows == std::vector<std::string>{"cot-on in-domain", "cot-off in-domain", "cot-on cross-domain",
                                                          "cot-off cross-domain"});
    CHECK(r.result.table.columns == metric_columns());
    REQUIRE(r.in_domain_gap.size() == 2);
    REQUIRE(r.cross_domain_gap.size() == 2);
    const auto on = r.result.reports("cot-on in-domain"), off = r.result.reports("cot-off in-domain");
    CHECK(r.in_domain_gap[0] == doctest::Approx(off[0].js_mean - on[0].js_mean));
    CHECK_THROWS(run_ablate_cot(s, cross, in));
  }

  TEST_CASE("cross-domain split uses its own seed") {
    const Corpus a = cross_domain_corpus(4242), b = cross_domain_corpus(4242);
    CHECK(a == b);
    CHECK(a.n_classes == 4);
    CHECK(a.vocab == Vocabulary::standard());
    CHECK_FALSE(a.train.front().cue_tokens == cross_domain_corpus(1).train.front().cue_tokens);
  }

  TEST_CASE("answer-only targets carry no analysis") {
    const Corpus& c = small_corpus();
    for (const auto& s : c.train) {
      const auto t = training_target(s, c.vocab, CotMode::AnswerOnly);
      for (int tok : t) {
        const auto sec = c.vocab.section_of(tok);
        if (sec) CHECK(*sec == Section::Answer);
        CHECK_FALSE(c.vocab.entry(tok).kind == TokenKind::Cue);
      }
    }
  }

  TEST_CASE("objective gradients pass and a corrupted rule fails") {
    const auto checks = run_gradcheck();
    REQUIRE(checks.size() == 3);
    CHECK(checks[0].objective == "sft");
    CHECK(checks[1].objective == "dpo");
    CHECK(checks[2].objective == "grpo");
    for (const auto& c : checks) {
      INFO(c.objective << ": " << c.report.message);
      CHECK(c.report.passed);
      CHECK(c.report.coords_checked > 0);
      CHECK_FALSE(c.tensor_names.empty());
    }
    GradcheckOptions bad;
    bad.corrupt_scale = 1.5;
    for (const auto& c : run_gradcheck(bad)) CHECK_FALSE(c.report.passed);
  }
}
