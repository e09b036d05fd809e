// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include "ambig/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>

#include "ambig/errors.hpp"

namespace ambig {

using num::Graph;
using num::Shape;
using num::Tensor;
using num::Var;

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;

std::string layer_name(int layer, const char* suffix) { return "l" + std::to_string(layer) + "." + suffix; }

void check_tokens(const PolicyConfig& cfg, std::span<const int> tokens) {
  if (tokens.empty()) throw ContractError("policy forward needs at least one token");
  if (tokens.size() > static_cast<std::size_t>(cfg.max_len)) {
    throw DimensionError("sequence length " + std::to_string(tokens.size()) + " exceeds max_len " +
                         std::to_string(cfg.max_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) throw DimensionError("token id " + std::to_string(t) + " outside the vocabulary");
  }
}

std::vector<int> concat(std::span<const int> a, std::span<const int> b) {
  std::vector<int> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<double> to_double(const Tensor& t) { return {t.data.begin(), t.data.end()}; }

void layer_norm_row(const double* x, const std::vector<double>& g, const std::vector<double>& b, double* out,
                    std::size_t d) {
  double mu = 0.0;
  for (std::size_t j = 0; j < d; ++j) mu += x[j];
  mu /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
  var /= static_cast<double>(d);
  const double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (std::size_t j = 0; j < d; ++j) out[j] = (x[j] - mu) * rstd * g[j] + b[j];
}

// out[n] = bias + x[k] · w[k × n], accumulated in the same order as num::matmul.
void affine_row(const double* x, const std::vector<double>& w, const double* bias, double* out, std::size_t k,
                std::size_t n) {
  std::fill(out, out + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double s = x[p];
    const double* wrow = w.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += s * wrow[j];
  }
  if (bias) {
    for (std::size_t j = 0; j < n; ++j) out[j] += bias[j];
  }
}

double gelu(double v) {
  constexpr double kC = 0.7978845608028654;
  constexpr double kA = 0.044715;
  return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
}

std::vector<double> softmax_of(std::span<const double> logits, std::span<const int> cols) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int c : cols) mx = std::max(mx, logits[static_cast<std::size_t>(c)]);
  std::vector<double> p;
  p.reserve(cols.size());
  double z = 0.0;
  for (int c : cols) {
    p.push_back(std::exp(logits[static_cast<std::size_t>(c)] - mx));
    z += p.back();
  }
  for (double& x : p) x /= z;
  return p;
}

}  // namespace

// ---- config ------------------------------------------------------------------

void PolicyConfig::validate() const {
  if (vocab_size < 1) throw ValidationError("vocab_size must be positive");
  if (d_model < 1 || n_layers < 0 || n_heads < 1 || ff_mult < 1 || max_len < 1) {
    throw ValidationError("policy dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ValidationError("d_model must be divisible by n_heads");
  if (class_token_ids.size() < 2) throw ValidationError("policy needs at least two class tokens");
  std::vector<int> sorted = class_token_ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("class_token_ids must be distinct");
  }
  if (sorted.front() < 0 || sorted.back() >= vocab_size) throw ValidationError("class_token_ids outside the vocabulary");
  if (answer_marker_id < 0 || answer_marker_id >= vocab_size || eoa_id < 0 || eoa_id >= vocab_size) {
    throw ValidationError("answer marker and <eoa> ids must be inside the vocabulary");
  }
}

PolicyConfig PolicyConfig::for_vocab(const Vocabulary& vocab, int n_classes) {
  PolicyConfig c;
  c.vocab_size = static_cast<int>(vocab.size());
  c.class_token_ids = vocab.class_tokens(n_classes);
  c.answer_marker_id = vocab.marker(Section::Answer);
  c.eoa_id = vocab.eoa();
  return c;
}

// ---- params ------------------------------------------------------------------

PolicyParams::PolicyParams(PolicyConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto v = static_cast<std::size_t>(config_.vocab_size);
  const auto ff = d * static_cast<std::size_t>(config_.ff_mult);
  add("tok_emb", {v, d});
  add("pos_emb", {static_cast<std::size_t>(config_.max_len), d});
  for (int l = 0; l < config_.n_layers; ++l) {
    add(layer_name(l, "ln1.g"), {d});
    add(layer_name(l, "ln1.b"), {d});
    add(layer_name(l, "attn.wqkv"), {d, 3 * d});
    add(layer_name(l, "attn.bqkv"), {3 * d});
    add(layer_name(l, "attn.wo"), {d, d});
    add(layer_name(l, "attn.bo"), {d});
    add(layer_name(l, "ln2.g"), {d});
    add(layer_name(l, "ln2.b"), {d});
    add(layer_name(l, "mlp.w1"), {d, ff});
    add(layer_name(l, "mlp.b1"), {ff});
    add(layer_name(l, "mlp.w2"), {ff, d});
    add(layer_name(l, "mlp.b2"), {d});
  }
  add("lnf.g", {d});
  add("lnf.b", {d});
  add("head.w", {d, v});
}

void PolicyParams::add(const std::string& name, Shape shape) {
  names_.push_back(name);
  Tensor t(std::move(shape));
  t.requires_grad = true;
  tensors_.push_back(std::move(t));
}

PolicyParams PolicyParams::init(const PolicyConfig& config, std::uint64_t seed) {
  PolicyParams p(config);
  Rng rng = make_rng({seed, 0x706f6c696379ULL});
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (std::size_t i = 0; i < p.count(); ++i) {
    const std::string& n = p.names_[i];
    auto& data = p.tensors_[i].data;
    const bool gain = n.ends_with(".g");
    const bool bias = n.ends_with(".b") || n.ends_with("bqkv") || n.ends_with("bo") || n.ends_with("b1") ||
                      n.ends_with("b2");
    if (gain) {
      std::fill(data.begin(), data.end(), 1.0f);
    } else if (!bias) {
      for (float& x : data) x = static_cast<float>(normal(rng));
    }
  }
  return p;
}

Tensor& PolicyParams::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

const Tensor& PolicyParams::get(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ContractError("no parameter named '" + name + "'");
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

std::vector<Tensor*> PolicyParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& t : tensors_) out.push_back(&t);
  return out;
}

std::size_t PolicyParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void PolicyParams::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

void PolicyParams::set_trainable(bool on) {
  for (auto& t : tensors_) t.requires_grad = on;
}

std::uint64_t PolicyParams::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    mix(names_[i].data(), names_[i].size());
    for (std::size_t s : tensors_[i].shape) mix(&s, sizeof s);
    mix(tensors_[i].data.data(), tensors_[i].data.size() * sizeof(float));
  }
  return h;
}

// ---- tape forward ------------------------------------------------------------

Var forward_logits(Graph& g, PolicyParams& params, std::span<const int> tokens, Bind bind) {
  const PolicyConfig& cfg = params.config();
  check_tokens(cfg, tokens);
  auto P = [&](const std::string& name) {
    Tensor& t = params.get(name);
    return bind == Bind::Train ? g.param(t) : g.constant(t);
  };
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);

  Var x = num::add(num::embedding(P("tok_emb"), tokens), num::embedding(P("pos_emb"), positions));
  for (int l = 0; l < cfg.n_layers; ++l) {
    Var h = num::layer_norm(x, P(layer_name(l, "ln1.g")), P(layer_name(l, "ln1.b")), kLnEps);
    Var qkv = num::add_row(num::matmul(h, P(layer_name(l, "attn.wqkv"))), P(layer_name(l, "attn.bqkv")));
    Var att = num::causal_attention(qkv, static_cast<std::size_t>(cfg.n_heads));
    x = num::add(x, num::add_row(num::matmul(att, P(layer_name(l, "attn.wo"))), P(layer_name(l, "attn.bo"))));
    h = num::layer_norm(x, P(layer_name(l, "ln2.g")), P(layer_name(l, "ln2.b")), kLnEps);
    Var f = num::gelu(num::add_row(num::matmul(h, P(layer_name(l, "mlp.w1"))), P(layer_name(l, "mlp.b1"))));
    x = num::add(x, num::add_row(num::matmul(f, P(layer_name(l, "mlp.w2"))), P(layer_name(l, "mlp.b2"))));
  }
  Var h = num::layer_norm(x, P("lnf.g"), P("lnf.b"), kLnEps);
  return num::matmul(h, P("head.w"));
}

std::vector<double> forward_logits(const PolicyParams& params, std::span<const int> tokens) {
  Graph g;
  // Frozen binding only reads the tensors.
  Var logits = forward_logits(g, const_cast<PolicyParams&>(params), tokens, Bind::Frozen);
  return {logits.values().begin(), logits.values().end()};
}

Var continuation_log_probs(const Var& logits, std::size_t prompt_len, std::span<const int> continuation) {
  if (continuation.empty()) throw ContractError("continuation must not be empty");
  if (prompt_len == 0) throw ContractError("prompt must not be empty");
  if (logits.shape().size() != 2 || logits.shape()[0] != prompt_len + continuation.size()) {
    throw DimensionError("logits do not cover prompt and continuation");
  }
  std::vector<int> rows(continuation.size());
  std::iota(rows.begin(), rows.end(), static_cast<int>(prompt_len) - 1);
  Var lp = num::log_softmax(num::select_rows(logits, rows), 1);
  return num::gather(lp, continuation);
}

Var sequence_log_prob(Graph& g, PolicyParams& params, std::span<const int> prompt, std::span<const int> continuation,
                      Bind bind) {
  if (continuation.empty()) throw ContractError("continuation must not be empty");
  const auto seq = concat(prompt, continuation);
  return continuation_log_probs(forward_logits(g, params, seq, bind), prompt.size(), continuation);
}

std::vector<double> sequence_log_prob(const PolicyParams& params, std::span<const int> prompt,
                                      std::span<const int> continuation) {
  Graph g;
  Var lp = sequence_log_prob(g, const_cast<PolicyParams&>(params), prompt, continuation, Bind::Frozen);
  return {lp.values().begin(), lp.values().end()};
}

// ---- readout -----------------------------------------------------------------

std::size_t readout_position(std::span<const int> prompt, std::span<const int> trajectory, const Vocabulary& vocab) {
  const std::size_t total = prompt.size() + trajectory.size();
  if (total == 0) throw ContractError("readout needs a non-empty sequence");
  const auto it = std::find(trajectory.begin(), trajectory.end(), vocab.marker(Section::Answer));
  if (it != trajectory.end()) return prompt.size() + static_cast<std::size_t>(it - trajectory.begin());
  return total - 1;
}

Var emotion_readout(const Var& logits, std::size_t pos, std::span<const int> class_ids) {
  const int row = static_cast<int>(pos);
  Var sel = num::select_cols(num::select_rows(logits, std::span<const int>(&row, 1)), class_ids);
  return num::exp(num::log_softmax(sel, 1));
}

Var emotion_readout(Graph& g, PolicyParams& params, std::span<const int> prompt, std::span<const int> trajectory,
                    const Vocabulary& vocab, Bind bind) {
  const std::size_t pos = readout_position(prompt, trajectory, vocab);
  const auto seq = concat(prompt, trajectory);
  Var logits = forward_logits(g, params, std::span<const int>(seq).first(pos + 1), bind);
  return emotion_readout(logits, pos, params.config().class_token_ids);
}

EmotionDistribution emotion_readout(const PolicyParams& params, std::span<const int> prompt,
                                    std::span<const int> trajectory, const Vocabulary& vocab,
                                    std::span<const int> class_ids) {
  const std::size_t pos = readout_position(prompt, trajectory, vocab);
  const auto seq = concat(prompt, trajectory);
  Decoder dec(params);
  std::span<const double> logits;
  for (std::size_t i = 0; i <= pos; ++i) logits = dec.step(seq[i]);
  if (class_ids.empty()) class_ids = params.config().class_token_ids;
  return EmotionDistribution(softmax_of(logits, class_ids));
}

TrajectoryScore score_trajectory(const PolicyParams& params, std::span<const int> prompt,
                                 std::span<const int> trajectory, const Vocabulary& vocab) {
  if (trajectory.empty()) throw ContractError("cannot score an empty trajectory");
  const PolicyConfig& cfg = params.config();
  const auto seq = concat(prompt, trajectory);
  check_tokens(cfg, seq);
  const std::size_t pos = readout_position(prompt, trajectory, vocab);
  TrajectoryScore out;
  Decoder dec(params);
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    const auto logits = dec.step(seq[i]);
    if (i == pos) out.readout = EmotionDistribution(softmax_of(logits, cfg.class_token_ids));
    if (i + 1 >= prompt.size()) {
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double v : logits) z += std::exp(v - mx);
      out.log_probs.push_back(logits[static_cast<std::size_t>(seq[i + 1])] - mx - std::log(z));
    }
  }
  if (pos + 1 == seq.size()) {
    out.readout = EmotionDistribution(softmax_of(dec.step(seq.back()), cfg.class_token_ids));
  }
  return out;
}

// ---- incremental decoder -----------------------------------------------------

Decoder::Decoder(const PolicyParams& params) : cfg_(params.config()) {
  tok_emb_ = to_double(params.get("tok_emb"));
  pos_emb_ = to_double(params.get("pos_emb"));
  lnf_g_ = to_double(params.get("lnf.g"));
  lnf_b_ = to_double(params.get("lnf.b"));
  head_ = to_double(params.get("head.w"));
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    Layer L;
    L.ln1_g = to_double(params.get(layer_name(l, "ln1.g")));
    L.ln1_b = to_double(params.get(layer_name(l, "ln1.b")));
    L.wqkv = to_double(params.get(layer_name(l, "attn.wqkv")));
    L.bqkv = to_double(params.get(layer_name(l, "attn.bqkv")));
    L.wo = to_double(params.get(layer_name(l, "attn.wo")));
    L.bo = to_double(params.get(layer_name(l, "attn.bo")));
    L.ln2_g = to_double(params.get(layer_name(l, "ln2.g")));
    L.ln2_b = to_double(params.get(layer_name(l, "ln2.b")));
    L.w1 = to_double(params.get(layer_name(l, "mlp.w1")));
    L.b1 = to_double(params.get(layer_name(l, "mlp.b1")));
    L.w2 = to_double(params.get(layer_name(l, "mlp.w2")));
    L.b2 = to_double(params.get(layer_name(l, "mlp.b2")));
    L.keys.assign(static_cast<std::size_t>(cfg_.max_len) * d, 0.0);
    L.values.assign(static_cast<std::size_t>(cfg_.max_len) * d, 0.0);
    layers_.push_back(std::move(L));
  }
  logits_.assign(static_cast<std::size_t>(cfg_.vocab_size), 0.0);
}

void Decoder::reset() { len_ = 0; }

std::span<const double> Decoder::step(int token) {
  if (len_ >= static_cast<std::size_t>(cfg_.max_len)) throw DimensionError("decoder context is full");
  if (token < 0 || token >= cfg_.vocab_size) throw DimensionError("token id " + std::to_string(token) + " outside the vocabulary");
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto H = static_cast<std::size_t>(cfg_.n_heads);
  const std::size_t dh = d / H;
  const std::size_t ff = d * static_cast<std::size_t>(cfg_.ff_mult);
  const std::size_t t = len_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> x(d), h(d), qkv(3 * d), att(d), proj(d), f(ff);
  for (std::size_t j = 0; j < d; ++j) x[j] = tok_emb_[static_cast<std::size_t>(token) * d + j] + pos_emb_[t * d + j];
  std::vector<double> scores(t + 1);
  for (auto& L : layers_) {
    layer_norm_row(x.data(), L.ln1_g, L.ln1_b, h.data(), d);
    affine_row(h.data(), L.wqkv, nullptr, qkv.data(), d, 3 * d);
    for (std::size_t j = 0; j < 3 * d; ++j) qkv[j] += L.bqkv[j];
    std::copy_n(qkv.begin() + static_cast<std::ptrdiff_t>(d), d, L.keys.begin() + static_cast<std::ptrdiff_t>(t * d));
    std::copy_n(qkv.begin() + static_cast<std::ptrdiff_t>(2 * d), d,
                L.values.begin() + static_cast<std::ptrdiff_t>(t * d));
    for (std::size_t hd = 0; hd < H; ++hd) {
      const std::size_t o = hd * dh;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t u = 0; u <= t; ++u) {
        double s = 0.0;
        for (std::size_t i = 0; i < dh; ++i) s += qkv[o + i] * L.keys[u * d + o + i];
        scores[u] = s * inv_sqrt;
        mx = std::max(mx, scores[u]);
      }
      double z = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        scores[u] = std::exp(scores[u] - mx);
        z += scores[u];
      }
      for (std::size_t i = 0; i < dh; ++i) {
        double acc = 0.0;
        for (std::size_t u = 0; u <= t; ++u) acc += scores[u] / z * L.values[u * d + o + i];
        att[o + i] = acc;
      }
    }
    affine_row(att.data(), L.wo, nullptr, proj.data(), d, d);
    for (std::size_t j = 0; j < d; ++j) x[j] += proj[j] + L.bo[j];
    layer_norm_row(x.data(), L.ln2_g, L.ln2_b, h.data(), d);
    affine_row(h.data(), L.w1, L.b1.data(), f.data(), d, ff);
    for (double& v : f) v = gelu(v);
    affine_row(f.data(), L.w2, nullptr, proj.data(), ff, d);
    for (std::size_t j = 0; j < d; ++j) x[j] += proj[j] + L.b2[j];
  }
  layer_norm_row(x.data(), lnf_g_, lnf_b_, h.data(), d);
  affine_row(h.data(), head_, nullptr, logits_.data(), d, static_cast<std::size_t>(cfg_.vocab_size));
  ++len_;
  return logits_;
}

// ---- decoding ----------------------------------------------------------------

namespace {

template <class Pick>
std::vector<int> decode(const PolicyParams& params, std::span<const int> prompt, int max_new, Pick pick) {
  const PolicyConfig& cfg = params.config();
  check_tokens(cfg, prompt);
  Decoder dec(params);
  std::span<const double> logits;
  for (int tok : prompt) logits = dec.step(tok);
  std::vector<int> out;
  for (int i = 0; i < max_new; ++i) {
    const int next = pick(logits);
    out.push_back(next);
    if (next == cfg.eoa_id || dec.length() + 1 >= static_cast<std::size_t>(cfg.max_len)) break;
    if (i + 1 < max_new) logits = dec.step(next);
  }
  return out;
}

}  // namespace

std::vector<int> sample_trajectory(const PolicyParams& params, std::span<const int> prompt, double temperature,
                                   int max_new, Rng& rng) {
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  std::vector<double> w;
  return decode(params, prompt, max_new, [&](std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    w.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) w[i] = std::exp((logits[i] - mx) / temperature);
    return static_cast<int>(sample_categorical(w, rng));
  });
}

std::vector<int> greedy_decode(const PolicyParams& params, std::span<const int> prompt, int max_new) {
  return decode(params, prompt, max_new, [](std::span<const double> logits) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  });
}

}  // namespace ambig
