// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include "ambig/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "ambig/errors.hpp"

namespace ambig {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw ValidationError(key + ": expected a number, got '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used == v.size()) return i;
  } catch (const std::logic_error&) {
  }
  throw ValidationError(key + ": expected an integer, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError(key + ": expected true or false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

Field real(std::string key, double& ref) {
  return {key, [&ref] { return fmt(ref); }, [&ref, key](const std::string& v) { ref = to_double(key, v); }};
}

Field integer(std::string key, int& ref) {
  return {key, [&ref] { return std::to_string(ref); },
          [&ref, key](const std::string& v) { ref = static_cast<int>(to_int(key, v)); }};
}

Field seed(std::string key, std::uint64_t& ref) {
  return {key, [&ref] { return std::to_string(ref); }, [&ref, key](const std::string& v) {
            const long long x = to_int(key, v);
            if (x < 0) throw ValidationError(key + " must be non-negative");
            ref = static_cast<std::uint64_t>(x);
          }};
}

std::vector<Field> corpus_fields(CorpusConfig& c) {
  return {
      {"corpus.profile", [&c] { return c.profile; }, [&c](const std::string& v) { c.profile = v; }},
      integer("corpus.n_classes", c.n_classes),
      integer("corpus.n_train", c.n_train),
      integer("corpus.n_eval", c.n_eval),
      integer("corpus.annotators_min", c.annotators_min),
      integer("corpus.annotators_max", c.annotators_max),
      real("corpus.alpha", c.alpha),
      integer("corpus.cues_per_sample", c.cues_per_sample),
      real("corpus.cue_leakage", c.cue_leakage),
      integer("corpus.transcript_len", c.transcript_len),
      real("corpus.lexical_rate", c.lexical_rate),
      seed("corpus.seed", c.seed),
  };
}

std::vector<Field> train_fields(TrainConfig& c) {
  return {
      {"train.method", [&c] { return std::string(method_name(c.method)); },
       [&c](const std::string& v) { c.method = parse_method(v); }},
      real("train.learning_rate", c.learning_rate),
      integer("train.total_steps", c.total_steps),
      real("train.warmup_fraction", c.warmup_fraction),
      integer("train.batch_size", c.batch_size),
      seed("train.seed", c.seed),
      integer("train.eval_every", c.eval_every),
      {"train.checkpoint_path", [&c] { return c.checkpoint_path; },
       [&c](const std::string& v) { c.checkpoint_path = v; }},
      integer("train.d_model", c.d_model),
      integer("train.n_layers", c.n_layers),
      integer("train.n_heads", c.n_heads),
      {"train.cot", [&c] { return std::string(c.cot_mode == CotMode::Full ? "full" : "answer"); },
       [&c](const std::string& v) {
         if (v == "full") {
           c.cot_mode = CotMode::Full;
         } else if (v == "answer") {
           c.cot_mode = CotMode::AnswerOnly;
         } else {
           throw ValidationError("train.cot: expected full or answer, got '" + v + "'");
         }
       }},
      real("train.temperature", c.rollout.temperature),
      integer("train.max_new", c.rollout.max_new),
      integer("train.n_rollouts", c.n_rollouts),
      real("train.tau", c.tau),
      integer("train.group_size", c.group_size),
      {"train.gt_in_update", [&c] { return std::string(c.gt_in_update ? "true" : "false"); },
       [&c](const std::string& v) { c.gt_in_update = to_bool("train.gt_in_update", v); }},
      integer("train.eval_max_new", c.eval_max_new),
      integer("train.stop_after", c.stop_after),
      real("train.lambda_sft", c.weights.lambda_sft),
      real("train.lambda1", c.weights.lambda1),
      real("train.lambda2", c.weights.lambda2),
      real("train.lambda3", c.weights.lambda3),
      real("train.beta_dpo", c.weights.beta_dpo),
      real("train.beta_grpo_kl", c.weights.beta_grpo_kl),
      real("train.epsilon_clip", c.weights.epsilon_clip),
  };
}

void apply_fields(const KeyValueConfig& kv, std::vector<Field> fields, const std::string& prefix) {
  for (const auto& [key, value] : kv.values()) {
    if (key.rfind(prefix, 0) != 0) continue;
    bool known = false;
    for (auto& f : fields) {
      if (f.key == key) {
        f.set(value);
        known = true;
        break;
      }
    }
    if (!known) throw ValidationError("unknown configuration key '" + key + "'");
  }
}

KeyValueConfig describe_fields(const std::vector<Field>& fields) {
  KeyValueConfig kv;
  for (const auto& f : fields) kv.set(f.key, f.get());
  return kv;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_digest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig kv;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, t, "expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ParseError(lineno, "<key>", "empty key");
    kv.set(key, trim(std::string_view(t).substr(eq + 1)));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

const std::string& KeyValueConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("missing configuration key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

void apply(const KeyValueConfig& kv, CorpusConfig& config) {
  // A profile resets the defaults the other keys then refine.
  if (kv.has("corpus.profile")) {
    const auto seed_before = config.seed;
    config = CorpusConfig::for_profile(kv.get("corpus.profile"));
    config.seed = seed_before;
  }
  apply_fields(kv, corpus_fields(config), "corpus.");
  config.validate();
}

void apply(const KeyValueConfig& kv, TrainConfig& config) {
  if (kv.has("train.method")) {
    const Method m = parse_method(kv.get("train.method"));
    if (m != config.method) {
      // Switching method brings that method's learning-rate default along.
      const TrainConfig d = TrainConfig::defaults(m);
      config.method = m;
      config.learning_rate = d.learning_rate;
      config.total_steps = d.total_steps;
    }
  }
  apply_fields(kv, train_fields(config), "train.");
  config.validate();
}

KeyValueConfig describe(const CorpusConfig& config) {
  CorpusConfig c = config;
  return describe_fields(corpus_fields(c));
}

KeyValueConfig describe(const TrainConfig& config) {
  TrainConfig c = config;
  return describe_fields(train_fields(c));
}

std::string config_digest(const TrainConfig& config) {
  KeyValueConfig kv = describe(config);
  for (const char* k : {"train.checkpoint_path", "train.stop_after", "train.eval_every", "train.eval_max_new"}) {
    kv.erase(k);
  }
  return kv.digest();
}

}  // namespace ambig
