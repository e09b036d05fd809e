// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "ambig/config.hpp"
#include "ambig/errors.hpp"
#include "ambig/trainer.hpp"
#include "helpers.hpp"

using namespace ambig;
using ambig::testing::small_corpus;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny(Method m, int steps = 6) {
  TrainConfig c = TrainConfig::defaults(m);
  c.learning_rate = 1e-3;
  c.total_steps = steps;
  c.batch_size = 2;
  c.d_model = 16;
  c.n_layers = 1;
  c.eval_max_new = 8;
  c.rollout.max_new = 12;
  c.group_size = 3;
  c.n_rollouts = 2;
  c.tau = 0.0;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ambig_test_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("method names") {
    for (Method m : {Method::Sft, Method::Dpo, Method::Grpo, Method::GrpoZ}) CHECK(parse_method(method_name(m)) == m);
    CHECK(std::string(method_name(Method::GrpoZ)) == "grpo_z");
    CHECK_THROWS_AS(parse_method("ppo"), ValidationError);
  }

  TEST_CASE("default rates and budgets") {
    CHECK(TrainConfig::defaults(Method::Sft).learning_rate == 1e-4);
    CHECK(TrainConfig::defaults(Method::Dpo).learning_rate == 5e-6);
    CHECK(TrainConfig::defaults(Method::Grpo).learning_rate == 2e-5);
    CHECK(TrainConfig::defaults(Method::Sft).total_steps == 2000);
    CHECK(TrainConfig::defaults(Method::GrpoZ).total_steps == 500);
    const LossWeights w;
    CHECK(w.lambda_sft == 1.0);
    CHECK(w.lambda1 == 0.1);
    CHECK(w.lambda2 == 0.1);
    CHECK(w.lambda3 == 0.1);
    CHECK(w.beta_dpo == 0.1);
    CHECK(w.beta_grpo_kl == 0.04);
    CHECK(w.epsilon_clip == 0.2);
    TrainConfig bad = tiny(Method::Sft);
    bad.group_size = 1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = tiny(Method::Sft);
    bad.learning_rate = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    c.learning_rate = 1e-3;
    c.total_steps = 100;
    c.warmup_fraction = 0.1;
    CHECK(lr_at(0, c) == 0.0);
    CHECK(lr_at(5, c) == doctest::Approx(5e-4));
    CHECK(lr_at(10, c) == doctest::Approx(1e-3));
    CHECK(lr_at(55, c) == doctest::Approx(5e-4));
    CHECK(std::abs(lr_at(100, c)) < 1e-18);
    double prev = lr_at(10, c);
    for (int s = 11; s <= 100; ++s) {
      CHECK(lr_at(s, c) <= prev);
      prev = lr_at(s, c);
    }
    CHECK_THROWS_AS(lr_at(101, c), ContractError);
    CHECK_THROWS_AS(lr_at(-1, c), ContractError);
    c.total_steps = 0;
    CHECK(lr_at(0, c) == 0.0);
  }

  TEST_CASE("AdamW with zero gradient only decays") {
    num::Tensor t({3}, std::vector<float>{1.0f, -2.0f, 0.5f});
    t.grad.assign(3, 0.0f);
    num::Tensor* ps[] = {&t};
    const std::string names[] = {"w"};
    AdamState st;
    step_optimizer(ps, names, st, 0.1);
    const float f = static_cast<float>(1.0 - 0.1 * 0.01);
    CHECK(t.data[0] == doctest::Approx(1.0f * f));
    CHECK(t.data[1] == doctest::Approx(-2.0f * f));
    CHECK(t.data[2] == doctest::Approx(0.5f * f));
    CHECK(st.t == 1);
  }

  TEST_CASE("AdamW's first step moves each coordinate by the learning rate") {
    num::Tensor t({2}, std::vector<float>{0.0f, 0.0f});
    t.grad = {3.0f, -0.01f};
    num::Tensor* ps[] = {&t};
    AdamState st;
    step_optimizer(ps, std::span<const std::string>{}, st, 0.01);
    CHECK(t.data[0] == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(t.data[1] == doctest::Approx(0.01).epsilon(1e-3));
  }

  TEST_CASE("AdamW minimises a quadratic") {
    num::Tensor x({2}, std::vector<float>{-4.0f, 7.0f});
    x.requires_grad = true;
    const std::vector<double> target{3.0, -1.0};
    num::Tensor* ps[] = {&x};
    AdamState st;
    AdamOptions o;
    o.weight_decay = 0.0;
    for (int i = 0; i < 200; ++i) {
      num::Graph g;
      x.zero_grad();
      const num::Var d = num::sub(g.param(x), g.constant({2}, target));
      g.backward(num::sum(num::mul(d, d)));
      step_optimizer(ps, std::span<const std::string>{}, st, 0.2, o);
    }
    CHECK(x.data[0] == doctest::Approx(3.0).epsilon(1e-3));
    CHECK(x.data[1] == doctest::Approx(-1.0).epsilon(1e-3));
  }

  TEST_CASE("non-finite gradients are rejected before any update") {
    const Corpus& c = small_corpus();
    PolicyParams p = ambig::testing::toy_policy(c, 1, 16, 1);
    p.set_trainable(true);
    for (auto* t : p.tensors()) t->grad.assign(t->size(), 0.1f);
    p.get("l0.mlp.w1").grad[3] = std::numeric_limits<float>::quiet_NaN();
    const auto before = p.checksum();
    AdamState st;
    try {
      step_optimizer(p, st, 1e-2);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("l0.mlp.w1") != std::string::npos);
    }
    CHECK(p.checksum() == before);
    CHECK(st.t == 0);
  }

  TEST_CASE("zero steps leave the initial policy unchanged") {
    const Corpus& c = small_corpus();
    const TrainConfig cfg = tiny(Method::Sft, 0);
    const TrainResult r = train(c, cfg);
    CHECK(r.state.params == initial_state(c, cfg).params);
    CHECK(r.state.step == 0);
    REQUIRE(r.final_eval.has_value());
    CHECK(r.final_eval->n == c.eval.size());
  }

  TEST_CASE("every method trains deterministically and leaves the reference alone") {
    const Corpus& c = small_corpus();
    for (Method m : {Method::Sft, Method::Dpo, Method::Grpo, Method::GrpoZ}) {
      CAPTURE(method_name(m));
      TrainConfig cfg = tiny(m, 4);
      cfg.eval_every = 2;
      const auto init = initial_state(c, cfg);
      int groups = 0, injected = 0;
      TrainObserver obs;
      obs.on_group = [&](int, const RolloutGroup& g, const Sample&) {
        ++groups;
        injected += g.gt_injected;
        CHECK(g.size() == static_cast<std::size_t>(cfg.group_size) + g.gt_injected);
      };
      const TrainResult a = train(c, cfg, &obs);
      const TrainResult b = train(c, cfg);
      CHECK(a.state == b.state);
      CHECK(step_log_csv(a.log) == step_log_csv(b.log));
      CHECK(a.state.ref.checksum() == init.ref.checksum());
      CHECK(a.state.params.checksum() != init.params.checksum());
      CHECK(a.state.step == 4);
      CHECK(a.log.size() >= 4);
      int evals = 0;
      for (const auto& rec : a.log) {
        CHECK(std::isfinite(rec.loss));
        evals += rec.eval.has_value();
      }
      CHECK(evals == 2);
      if (m == Method::Grpo || m == Method::GrpoZ) {
        CHECK(groups == 4 * cfg.batch_size);
        CHECK(injected == (m == Method::GrpoZ ? groups : 0));
      } else {
        CHECK(groups == 0);
      }
      cfg.seed = 7;
      CHECK_FALSE(train(c, cfg).state.params == a.state.params);
    }
  }

  TEST_CASE("step log format") {
    StepRecord r1{1, Method::Dpo, 0.5, 1e-3, std::nullopt, "skipped"};
    StepRecord r2{2, Method::Dpo, 0.25, 5e-4, MetricsReport{0.1, 0.9, 0.3, 0.2, 12}, ""};
    const std::vector<StepRecord> log{r1, r2};
    const std::string csv = step_log_csv(log, "digest: abc");
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    CHECK(line == "# digest: abc");
    std::getline(is, line);
    CHECK(line == "step,method,loss,lr,js,bc,r2,brier,note");
    std::getline(is, line);
    CHECK(line.rfind("1,dpo,", 0) == 0);
    CHECK(line.find(",,,,skipped") != std::string::npos);
    std::getline(is, line);
    CHECK(line.rfind("2,dpo,", 0) == 0);
    CHECK(std::count(line.begin(), line.end(), ',') == 8);
  }

  TEST_CASE("checkpoint round trip and split runs") {
    const Corpus& c = small_corpus();
    const auto dir = scratch("ckpt");
    for (Method m : {Method::Sft, Method::GrpoZ}) {
      CAPTURE(method_name(m));
      const TrainConfig full = tiny(m, 6);
      const TrainResult whole = train(c, full);

      TrainConfig first = full;
      first.stop_after = 3;
      first.checkpoint_path = (dir / "half.bin").string();
      const TrainResult half = train(c, first);
      CHECK(half.state.step == 3);
      const TrainState loaded = load_checkpoint(dir / "half.bin", c, full);
      // Gradient buffers are not persisted; compare what a checkpoint holds.
      CHECK(loaded.params.checksum() == half.state.params.checksum());
      CHECK(loaded.ref.checksum() == half.state.ref.checksum());
      CHECK(loaded.adam == half.state.adam);
      CHECK(loaded.step == half.state.step);
      CHECK(loaded.iteration == half.state.iteration);
      CHECK(loaded.cursor == half.state.cursor);
      const TrainResult rest = train(c, full, nullptr, &loaded);
      CHECK(rest.state == whole.state);

      TrainConfig other = full;
      other.learning_rate *= 2;
      CHECK_THROWS_AS(load_checkpoint(dir / "half.bin", c, other), ValidationError);
      CHECK(config_digest(first) == config_digest(full));
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin", c, tiny(Method::Sft)), IoError);
    {
      std::ofstream os(dir / "junk.bin", std::ios::binary);
      os << "not a checkpoint";
    }
    CHECK_THROWS(load_checkpoint(dir / "junk.bin", c, tiny(Method::Sft)));
    fs::remove_all(dir);
  }

  TEST_CASE("evaluation against oracle predictors") {
    const Corpus& c = small_corpus();
    const auto uniform = evaluate([](const Sample&) { return EmotionDistribution({0.25, 0.25, 0.25, 0.25}); }, c.eval);
    double bc = 0.0;
    for (const auto& s : c.eval) {
      for (double p : s.p_gt.probs) bc += std::sqrt(p * 0.25);
    }
    CHECK(uniform.bc_mean == doctest::Approx(bc / c.eval.size()).epsilon(1e-12));
    CHECK(uniform.n == c.eval.size());

    const auto perfect = evaluate([](const Sample& s) { return s.p_gt; }, c.eval);
    CHECK(perfect.js_mean == doctest::Approx(0.0));
    CHECK(perfect.bc_mean == doctest::Approx(1.0));
    CHECK(perfect.brier_mean == doctest::Approx(0.0));
    CHECK(perfect.r2 == doctest::Approx(1.0));

    const auto p = ambig::testing::toy_policy(c, 1, 16, 1);
    const auto m = evaluate(p, c.eval, c.vocab, 8);
    CHECK(m.n == c.eval.size());
    CHECK(m.js_mean >= 0.0);
    CHECK(m.js_mean <= std::log(2.0));
    CHECK(m.bc_mean <= 1.0 + 1e-12);
  }
}
