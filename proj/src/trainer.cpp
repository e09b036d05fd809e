// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include "ambig/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ambig/config.hpp"
#include "ambig/errors.hpp"

namespace ambig {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t { kStreamData = 0x64617461, kStreamRollout = 0x726f6c6c };

constexpr char kMagic[8] = {'A', 'M', 'B', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

// Samples in seeded per-epoch shuffled order, addressed by a global cursor.
class DataStream {
 public:
  DataStream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
    if (n == 0) throw EmptyInputError("training split is empty");
  }

  std::size_t at(std::uint64_t cursor) {
    const std::uint64_t epoch = cursor / n_;
    if (epoch != epoch_ || perm_.empty()) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      Rng rng = make_rng({seed_, kStreamData, epoch});
      std::shuffle(perm_.begin(), perm_.end(), rng);
      epoch_ = epoch;
    }
    return perm_[cursor % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> perm_;
};

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- little-endian binary helpers ----

void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : b_(std::move(bytes)) {}
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_++])) << (8 * i);
    return v;
  }
  std::string str() {
    const auto n = static_cast<std::size_t>(uint(4));
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw IoError("checkpoint is truncated");
  }
  std::string b_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::string name;
  num::Shape shape;
  const std::vector<float>* data = nullptr;
};

}  // namespace

// ---- config ------------------------------------------------------------------

const char* method_name(Method m) {
  switch (m) {
    case Method::Sft: return "sft";
    case Method::Dpo: return "dpo";
    case Method::Grpo: return "grpo";
    case Method::GrpoZ: return "grpo_z";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "sft") return Method::Sft;
  if (name == "dpo") return Method::Dpo;
  if (name == "grpo") return Method::Grpo;
  if (name == "grpo_z") return Method::GrpoZ;
  throw ValidationError("unknown method '" + name + "' (expected sft, dpo, grpo or grpo_z)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ValidationError("warmup_fraction must be in [0, 1)");
  if (total_steps < 0) throw ValidationError("total_steps must be non-negative");
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (eval_every < 0) throw ValidationError("eval_every must be non-negative");
  if (d_model < 1 || n_layers < 0 || n_heads < 1 || d_model % n_heads != 0) {
    throw ValidationError("d_model must be a positive multiple of n_heads");
  }
  weights.validate();
  if (!(rollout.temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (rollout.max_new < 1 || eval_max_new < 1) throw ValidationError("max_new must be at least 1");
  if (n_rollouts < 1) throw ValidationError("n_rollouts must be at least 1");
  if (!(tau >= 0.0)) throw ValidationError("tau must be non-negative");
  if (group_size < 2) throw ValidationError("group_size must be at least 2");
}

TrainConfig TrainConfig::defaults(Method method) {
  TrainConfig c;
  c.method = method;
  switch (method) {
    case Method::Sft:
      c.learning_rate = 1e-4;
      c.total_steps = 2000;
      break;
    case Method::Dpo:
      c.learning_rate = 5e-6;
      c.total_steps = 2000;
      break;
    case Method::Grpo:
    case Method::GrpoZ:
      c.learning_rate = 2e-5;
      c.total_steps = 500;
      break;
  }
  return c;
}

double lr_at(int step, const TrainConfig& config) {
  const int total = config.total_steps;
  if (step < 0 || step > total) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  if (total == 0) return 0.0;
  const int warm = static_cast<int>(std::ceil(config.warmup_fraction * total));
  const double peak = config.learning_rate;
  if (step < warm) return peak * static_cast<double>(step) / warm;
  if (total == warm) return peak;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- optimizer ---------------------------------------------------------------

void step_optimizer(std::span<num::Tensor* const> params, std::span<const std::string> names, AdamState& state,
                    double lr, const AdamOptions& o) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i]->grad;
    if (!g.empty() && g.size() != params[i]->size()) throw DimensionError("gradient size mismatch");
    for (float x : g) {
      if (!std::isfinite(x)) {
        throw NumericError("non-finite gradient in tensor '" + (i < names.size() ? names[i] : std::to_string(i)) + "'");
      }
    }
  }
  if (state.m.empty()) {
    for (auto* t : params) {
      state.m.emplace_back(t->size(), 0.0f);
      state.v.emplace_back(t->size(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("optimizer state does not match the parameters");
  ++state.t;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& data = params[i]->data;
    const auto& g = params[i]->grad;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      const double mj = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
      const double vj = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + o.eps) + o.weight_decay * data[j];
      data[j] = static_cast<float>(data[j] - lr * update);
    }
  }
}

void step_optimizer(PolicyParams& params, AdamState& state, double lr, const AdamOptions& options) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < params.count(); ++i) names.push_back(params.name(i));
  const auto ts = params.tensors();
  step_optimizer(ts, names, state, lr, options);
}

// ---- training ----------------------------------------------------------------

PolicyConfig policy_config(const Corpus& corpus, const TrainConfig& config) {
  PolicyConfig pc = PolicyConfig::for_vocab(corpus.vocab, corpus.n_classes);
  pc.d_model = config.d_model;
  pc.n_layers = config.n_layers;
  pc.n_heads = config.n_heads;
  return pc;
}

TrainState initial_state(const Corpus& corpus, const TrainConfig& config) {
  TrainState s;
  s.params = PolicyParams::init(policy_config(corpus, config), config.seed);
  s.ref = s.params.clone();
  s.ref.set_trainable(false);
  return s;
}

MetricsReport evaluate(const std::function<EmotionDistribution(const Sample&)>& predictor,
                       std::span<const Sample> samples) {
  std::vector<DistributionPair> pairs;
  pairs.reserve(samples.size());
  for (const auto& s : samples) pairs.emplace_back(s.p_gt, predictor(s));
  return evaluate_batch(pairs);
}

MetricsReport evaluate(const PolicyParams& params, std::span<const Sample> samples, const Vocabulary& vocab,
                       int max_new, int n_classes) {
  if (samples.empty()) throw EmptyInputError("evaluation split is empty");
  const int c = n_classes > 0 ? n_classes : static_cast<int>(samples.front().p_gt.size());
  const auto class_ids = vocab.class_tokens(c);
  return evaluate(
      [&](const Sample& s) {
        const auto prompt = build_prompt(s, vocab);
        const auto traj = greedy_decode(params, prompt, max_new);
        return emotion_readout(params, prompt, traj, vocab, class_ids);
      },
      samples);
}

TrainResult train(const Corpus& corpus, const TrainConfig& config, const TrainObserver* observer,
                  const TrainState* resume) {
  config.validate();
  const Vocabulary& vocab = corpus.vocab;
  TrainResult result;
  result.state = resume ? *resume : initial_state(corpus, config);
  TrainState& st = result.state;
  if (st.params.config() != policy_config(corpus, config)) {
    throw ValidationError("resumed state does not match the configured policy");
  }
  const int end = config.stop_after >= 0 ? std::min(config.stop_after, config.total_steps) : config.total_steps;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  DataStream stream(corpus.train.size(), config.seed);
  auto next_sample = [&]() -> const Sample& { return corpus.train[stream.at(st.cursor++)]; };
  const std::uint64_t max_iterations = 4ULL * static_cast<std::uint64_t>(std::max(config.total_steps, 1));

  auto finish_step = [&](double loss, double lr, std::string note) {
    StepRecord rec{st.step, config.method, loss, lr, std::nullopt, std::move(note)};
    if (config.eval_every > 0 && st.step % config.eval_every == 0 && !corpus.eval.empty() && rec.note.empty()) {
      rec.eval = evaluate(st.params, corpus.eval, vocab, config.eval_max_new);
    }
    if (observer && observer->on_step) observer->on_step(rec);
    result.log.push_back(std::move(rec));
  };

  while (st.step < end) {
    if (config.method == Method::Dpo && st.iteration >= max_iterations) break;
    const std::uint64_t it = st.iteration++;
    const double lr = lr_at(st.step + 1, config);
    double loss_total = 0.0;

    if (config.method == Method::Sft) {
      st.params.zero_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        num::Graph g;
        LossTerms terms;
        auto loss = sft_loss(g, st.params, next_sample(), vocab, config.weights, config.cot_mode, &terms);
        g.backward(num::scale(loss, 1.0 / static_cast<double>(batch)));
        loss_total += terms.total;
      }
      loss_total /= static_cast<double>(batch);
    } else if (config.method == Method::Dpo) {
      std::vector<std::pair<const Sample*, PreferencePair>> pairs;
      int skipped = 0;
      for (std::size_t slot = 0; pairs.size() < batch && slot < 4 * batch; ++slot) {
        const Sample& s = next_sample();
        Rng rng = make_rng({config.seed, kStreamRollout, it, slot});
        MiningReport report;
        auto pair = mine_preference_pair(st.params, s, vocab, config.n_rollouts, config.tau, rng, config.rollout,
                                         config.cot_mode, &report);
        if (observer && observer->on_mining) observer->on_mining(st.step, s, report, pair);
        if (pair) {
          pairs.emplace_back(&s, std::move(*pair));
        } else {
          ++skipped;
        }
      }
      result.skipped_samples += skipped;
      if (pairs.empty()) {
        StepRecord rec{st.step, config.method, std::nan(""), 0.0, std::nullopt, "skipped:no_negative"};
        if (observer && observer->on_step) observer->on_step(rec);
        result.log.push_back(std::move(rec));
        continue;
      }
      st.params.zero_grad();
      for (const auto& [s, pair] : pairs) {
        num::Graph g;
        LossTerms terms;
        auto loss = dpo_total_loss(g, st.params, st.ref, pair, *s, vocab, config.weights, &terms);
        g.backward(num::scale(loss, 1.0 / static_cast<double>(pairs.size())));
        loss_total += terms.total;
      }
      loss_total /= static_cast<double>(pairs.size());
    } else {
      // π_old is the current policy: rollouts are drawn before the update.
      std::vector<RolloutGroup> groups;
      for (std::size_t slot = 0; slot < batch; ++slot) {
        const Sample& s = next_sample();
        Rng rng = make_rng({config.seed, kStreamRollout, it, slot});
        auto group = build_group(st.params, s, vocab, config.group_size, config.weights, rng, config.rollout);
        if (config.method == Method::GrpoZ) inject_gt_trajectory(group, s, st.params, vocab, config.weights);
        if (observer && observer->on_group) observer->on_group(st.step, group, s);
        groups.push_back(std::move(group));
      }
      std::size_t members = 0;
      for (const auto& gr : groups) members += gr.size() - (gr.gt_injected && !config.gt_in_update ? 1 : 0);
      st.params.zero_grad();
      for (const auto& gr : groups) {
        num::Graph g;
        GrpoTerms terms;
        auto obj = grpo_objective(g, st.params, st.ref, std::span<const RolloutGroup>(&gr, 1), config.weights,
                                  config.gt_in_update, &terms);
        const double w = static_cast<double>(terms.members) / static_cast<double>(members);
        g.backward(num::scale(obj, -w));
        loss_total -= w * obj.item();
      }
    }
    step_optimizer(st.params, st.adam, lr);
    ++st.step;
    finish_step(loss_total, lr, {});
  }

  if (st.step >= config.total_steps && !corpus.eval.empty()) {
    result.final_eval = evaluate(st.params, corpus.eval, vocab, config.eval_max_new);
  }
  if (!config.checkpoint_path.empty()) save_checkpoint(st, config, config.checkpoint_path);
  return result;
}

std::string step_log_csv(std::span<const StepRecord> log, const std::string& header_comment) {
  std::ostringstream os;
  if (!header_comment.empty()) os << "# " << header_comment << '\n';
  os << "step,method,loss,lr,js,bc,r2,brier,note\n";
  for (const auto& r : log) {
    os << r.step << ',' << method_name(r.method) << ',' << fmt(r.loss) << ',' << fmt(r.lr) << ',';
    if (r.eval) {
      os << fmt(r.eval->js_mean) << ',' << fmt(r.eval->bc_mean) << ',' << fmt(r.eval->r2) << ','
         << fmt(r.eval->brier_mean);
    } else {
      os << ",,,";
    }
    os << ',' << r.note << '\n';
  }
  return os.str();
}

// ---- checkpoints ---------------------------------------------------------------

void save_checkpoint(const TrainState& state, const TrainConfig& config, const std::filesystem::path& path) {
  std::vector<Entry> entries;
  std::vector<std::vector<float>> scratch;
  const auto& p = state.params;
  for (std::size_t i = 0; i < p.count(); ++i) entries.push_back({"param." + p.name(i), p.tensor(i).shape, &p.tensor(i).data});
  for (std::size_t i = 0; i < state.adam.m.size(); ++i) {
    entries.push_back({"adam_m." + p.name(i), p.tensor(i).shape, &state.adam.m[i]});
    entries.push_back({"adam_v." + p.name(i), p.tensor(i).shape, &state.adam.v[i]});
  }
  for (std::size_t i = 0; i < state.ref.count(); ++i) {
    entries.push_back({"ref." + state.ref.name(i), state.ref.tensor(i).shape, &state.ref.tensor(i).data});
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  put_u32(os, kCheckpointVersion);
  put_str(os, config_digest(config));
  put_u64(os, static_cast<std::uint64_t>(state.step));
  put_u64(os, state.iteration);
  put_u64(os, state.cursor);
  put_u64(os, static_cast<std::uint64_t>(state.adam.t));
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    put_str(os, e.name);
    put_u32(os, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) put_u64(os, d);
    put_u64(os, offset);
    offset += e.data->size();
  }
  put_u64(os, offset);
  for (const auto& e : entries) {
    for (float f : *e.data) put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path, const Corpus& corpus, const TrainConfig& config) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  Reader r(ss.str());
  if (r.raw(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw IoError(path.string() + " is not a checkpoint");
  if (r.uint(4) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  const std::string digest = r.str();
  if (digest != config_digest(config)) {
    throw ValidationError("checkpoint config digest " + digest + " does not match " + config_digest(config));
  }
  TrainState st = initial_state(corpus, config);
  st.step = static_cast<int>(r.uint(8));
  st.iteration = r.uint(8);
  st.cursor = r.uint(8);
  st.adam.t = static_cast<std::int64_t>(r.uint(8));
  const auto n_entries = r.uint(4);
  struct Index {
    std::string name;
    num::Shape shape;
    std::uint64_t offset;
  };
  std::vector<Index> index;
  for (std::uint64_t i = 0; i < n_entries; ++i) {
    Index e;
    e.name = r.str();
    const auto ndim = r.uint(4);
    for (std::uint64_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<std::size_t>(r.uint(8)));
    e.offset = r.uint(8);
    index.push_back(std::move(e));
  }
  const auto blob_len = r.uint(8);
  std::vector<float> blob(static_cast<std::size_t>(blob_len));
  for (auto& f : blob) f = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));

  auto fill = [&](const std::string& name, const num::Shape& shape, std::vector<float>& out) {
    const auto it = std::find_if(index.begin(), index.end(), [&](const Index& e) { return e.name == name; });
    if (it == index.end()) throw IoError("checkpoint lacks '" + name + "'");
    if (it->shape != shape) throw DimensionError("checkpoint entry '" + name + "' has shape " + num::shape_str(it->shape));
    const std::size_t n = num::numel(shape);
    if (it->offset + n > blob.size()) throw IoError("checkpoint entry '" + name + "' overruns the data blob");
    out.assign(blob.begin() + static_cast<std::ptrdiff_t>(it->offset),
               blob.begin() + static_cast<std::ptrdiff_t>(it->offset + n));
  };
  const bool has_moments = std::any_of(index.begin(), index.end(), [](const Index& e) { return e.name.rfind("adam_m.", 0) == 0; });
  for (std::size_t i = 0; i < st.params.count(); ++i) {
    const auto& name = st.params.name(i);
    const auto& shape = st.params.tensor(i).shape;
    fill("param." + name, shape, st.params.tensor(i).data);
    fill("ref." + name, shape, st.ref.tensor(i).data);
    if (has_moments) {
      st.adam.m.emplace_back();
      st.adam.v.emplace_back();
      fill("adam_m." + name, shape, st.adam.m.back());
      fill("adam_v." + name, shape, st.adam.v.back());
    }
  }
  return st;
}

}  // namespace ambig
