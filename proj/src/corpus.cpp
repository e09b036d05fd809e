// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include "ambig/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ambig/errors.hpp"
#include "json.hpp"

namespace ambig {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "ambig-corpus";
constexpr int kFormatVersion = 1;

enum : std::uint64_t { kStreamTrain = 1, kStreamEval = 2 };

// Splits n items over `weights` by largest remainder; ties go to the lower index.
std::vector<int> proportional_counts(std::span<const double> weights, int n) {
  std::vector<int> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> rem;
  int used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] * n;
    counts[i] = static_cast<int>(std::floor(exact));
    used += counts[i];
    rem.emplace_back(exact - counts[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < n && k < rem.size(); ++k, ++used) ++counts[rem[k].second];
  return counts;
}

Sample generate_sample(const CorpusConfig& cfg, const Vocabulary& vocab, const std::string& id, Rng& rng,
                       EmotionDistribution& latent_out) {
  const int C = cfg.n_classes;
  latent_out = draw_latent(C, cfg.alpha, rng);
  const auto& latent = latent_out.probs;

  const int span = cfg.annotators_max - cfg.annotators_min + 1;
  const int m = cfg.annotators_min + static_cast<int>(rng() % static_cast<std::uint64_t>(span));

  Sample s;
  s.id = id;
  s.votes = simulate_annotators(latent_out, m, rng);
  s.p_gt = aggregate_votes(s.votes, vocab.class_names(C));

  const auto counts = proportional_counts(latent, cfg.cues_per_sample);
  for (int c = 0; c < C; ++c) {
    for (int k = 0; k < counts[static_cast<std::size_t>(c)]; ++k) {
      int cls = c;
      if (C > 1 && uniform01(rng) < cfg.cue_leakage) {
        cls = static_cast<int>(rng() % static_cast<std::uint64_t>(C - 1));
        if (cls >= c) ++cls;
      }
      const auto& pool = vocab.cue_pool(cls);
      s.cue_tokens.push_back(pool[rng() % pool.size()]);
    }
  }
  std::shuffle(s.cue_tokens.begin(), s.cue_tokens.end(), rng);

  for (int k = 0; k < cfg.transcript_len; ++k) {
    if (uniform01(rng) < cfg.lexical_rate) {
      const auto cls = static_cast<int>(sample_categorical(latent, rng));
      const auto& lex = vocab.lexicon(cls);
      s.transcript_tokens.push_back(lex[rng() % lex.size()]);
    } else {
      const auto& fill = vocab.fillers();
      s.transcript_tokens.push_back(fill[rng() % fill.size()]);
    }
  }
  s.cot_gt = synthesize_cot(s.cue_tokens, s.transcript_tokens, s.p_gt, vocab);
  return s;
}

std::vector<int> ids_field(const json& rec, const char* field, std::size_t line, const Vocabulary& vocab) {
  if (!rec.contains(field) || !rec[field].is_array()) throw ParseError(line, field, "missing or not an array");
  std::vector<int> out;
  for (const auto& v : rec[field]) {
    if (!v.is_number_integer()) throw ParseError(line, field, "non-integer element");
    const int id = v.get<int>();
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) throw ParseError(line, field, "token id out of range");
    out.push_back(id);
  }
  return out;
}

}  // namespace

std::vector<int> build_prompt(const Sample& s, const Vocabulary& vocab) {
  std::vector<int> p;
  p.reserve(s.cue_tokens.size() + s.transcript_tokens.size() + 3);
  p.push_back(vocab.bos());
  p.insert(p.end(), s.cue_tokens.begin(), s.cue_tokens.end());
  p.push_back(vocab.sep());
  p.insert(p.end(), s.transcript_tokens.begin(), s.transcript_tokens.end());
  p.push_back(vocab.sep());
  return p;
}

void CorpusConfig::validate() const {
  if (n_classes < 2 || n_classes > Vocabulary::kMaxClasses) {
    throw ValidationError("n_classes must be in [2, " + std::to_string(Vocabulary::kMaxClasses) + "], got " +
                          std::to_string(n_classes));
  }
  if (n_train < 0 || n_eval < 0) throw ValidationError("split sizes must be non-negative");
  if (annotators_min < 1 || annotators_max < annotators_min) throw ValidationError("annotator range must satisfy 1 <= min <= max");
  if (!(alpha > 0.0)) throw ValidationError("alpha must be positive");
  if (cues_per_sample < 1) throw ValidationError("cues_per_sample must be at least 1");
  if (!(cue_leakage >= 0.0 && cue_leakage < 1.0)) throw ValidationError("cue_leakage must be in [0, 1)");
  if (transcript_len < 0) throw ValidationError("transcript_len must be non-negative");
  if (!(lexical_rate >= 0.0 && lexical_rate <= 1.0)) throw ValidationError("lexical_rate must be in [0, 1]");
}

CorpusConfig CorpusConfig::iemocap_like() { return CorpusConfig{}; }

CorpusConfig CorpusConfig::cremad_like() {
  CorpusConfig c;
  c.profile = "cremad-like";
  c.n_classes = 6;
  c.annotators_min = 4;
  c.annotators_max = 12;
  c.lexical_rate = 0.0;
  return c;
}

CorpusConfig CorpusConfig::for_profile(const std::string& name) {
  if (name == "iemocap-like") return iemocap_like();
  if (name == "cremad-like") return cremad_like();
  throw ValidationError("unknown corpus profile '" + name + "'");
}

VoteCounts simulate_annotators(const EmotionDistribution& latent, int m, Rng& rng) {
  if (m < 1) throw ContractError("simulate_annotators needs at least one annotator");
  VoteCounts v;
  v.counts.assign(latent.size(), 0);
  for (int i = 0; i < m; ++i) ++v.counts[sample_categorical(latent.probs, rng)];
  return v;
}

EmotionDistribution draw_latent(int n_classes, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> g(static_cast<std::size_t>(n_classes));
  double total = 0.0;
  for (double& x : g) {
    x = gamma(rng);
    total += x;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    // Every draw underflowed: the α → 0 limit is a one-hot mixture.
    std::fill(g.begin(), g.end(), 0.0);
    g[rng() % g.size()] = 1.0;
    total = 1.0;
  }
  for (double& x : g) x /= total;
  return EmotionDistribution(std::move(g));
}

Corpus generate_corpus(const CorpusConfig& config, CorpusLatents* latents) {
  config.validate();
  Corpus corpus;
  corpus.vocab = Vocabulary::standard();
  corpus.n_classes = config.n_classes;
  corpus.profile = config.profile;
  auto build = [&](int n, std::uint64_t stream, const char* prefix, std::vector<Sample>& out,
                   std::vector<EmotionDistribution>* lat) {
    for (int i = 0; i < n; ++i) {
      Rng rng = make_rng({config.seed, stream, static_cast<std::uint64_t>(i)});
      std::ostringstream id;
      id << prefix << '-' << std::setw(6) << std::setfill('0') << i;
      EmotionDistribution latent;
      out.push_back(generate_sample(config, corpus.vocab, id.str(), rng, latent));
      if (lat) lat->push_back(std::move(latent));
    }
  };
  build(config.n_train, kStreamTrain, "train", corpus.train, latents ? &latents->train : nullptr);
  build(config.n_eval, kStreamEval, "eval", corpus.eval, latents ? &latents->eval : nullptr);
  return corpus;
}

void check_sample(const Sample& s, const Vocabulary& vocab) {
  const auto expected = aggregate_votes(s.votes);
  if (expected.size() != s.p_gt.size()) throw ValidationError(s.id + ": p_gt has the wrong class count");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (std::abs(expected[i] - s.p_gt[i]) > 1e-9) throw ValidationError(s.id + ": p_gt disagrees with votes");
  }
  if (!validate_consistency(s.cot_gt, s.p_gt, vocab)) throw ValidationError(s.id + ": trajectory inconsistent with p_gt");
}

void save_split(const std::vector<Sample>& samples, const Corpus& meta, const std::string& split,
                const std::filesystem::path& path, const std::string& digest) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  json header = {{"format", kFormat},           {"version", kFormatVersion},
                 {"split", split},              {"profile", meta.profile},
                 {"n_classes", meta.n_classes}, {"n_records", samples.size()}};
  if (!digest.empty()) header["config_digest"] = digest;
  os << header.dump() << '\n';
  for (const auto& s : samples) {
    json rec = {{"id", s.id},
                {"cue_tokens", s.cue_tokens},
                {"transcript_tokens", s.transcript_tokens},
                {"votes", s.votes.counts},
                {"cot_text", meta.vocab.decode(s.cot_gt.raw)}};
    os << rec.dump() << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<Sample> load_split(const std::filesystem::path& path, const Vocabulary& vocab, int* n_classes_out,
                               std::string* profile_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw ParseError(1, "header", "file is empty");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(1, "header", e.what());
  }
  if (header.value("format", "") != kFormat) throw ParseError(1, "format", "not an ambig corpus file");
  if (header.value("version", 0) != kFormatVersion) throw ParseError(1, "version", "unsupported version");
  if (!header.contains("n_classes") || !header["n_classes"].is_number_integer()) throw ParseError(1, "n_classes", "missing");
  const int C = header["n_classes"].get<int>();
  if (C < 2 || C > vocab.num_classes()) throw ParseError(1, "n_classes", "out of range for the vocabulary");
  const auto expected = header.value("n_records", std::size_t{0});
  const auto names = vocab.class_names(C);

  std::vector<Sample> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(lineno, "<record>", e.what());
    }
    if (!rec.is_object()) throw ParseError(lineno, "<record>", "not an object");
    Sample s;
    if (!rec.contains("id") || !rec["id"].is_string()) throw ParseError(lineno, "id", "missing or not a string");
    s.id = rec["id"].get<std::string>();
    s.cue_tokens = ids_field(rec, "cue_tokens", lineno, vocab);
    s.transcript_tokens = ids_field(rec, "transcript_tokens", lineno, vocab);
    if (!rec.contains("votes") || !rec["votes"].is_array()) throw ParseError(lineno, "votes", "missing or not an array");
    for (const auto& v : rec["votes"]) {
      if (!v.is_number_integer()) throw ParseError(lineno, "votes", "non-integer count");
      s.votes.counts.push_back(v.get<int>());
    }
    if (s.votes.size() != static_cast<std::size_t>(C)) throw ParseError(lineno, "votes", "expected " + std::to_string(C) + " counts");
    try {
      s.p_gt = aggregate_votes(s.votes, names);
    } catch (const Error& e) {
      throw ParseError(lineno, "votes", e.what());
    }
    const std::string cot_text = rec.value("cot_text", "");
    try {
      if (cot_text.empty()) {
        // Vote-only records (external annotations) get a synthesised trajectory.
        s.cot_gt = synthesize_cot(s.cue_tokens, s.transcript_tokens, s.p_gt, vocab);
      } else {
        const auto parsed = parse_trajectory(vocab.encode(cot_text), vocab);
        if (!parsed.ok()) throw ParseError(lineno, "cot_text", parsed.failure->message);
        s.cot_gt = *parsed.trajectory;
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(lineno, "cot_text", e.what());
    }
    if (!validate_consistency(s.cot_gt, s.p_gt, vocab)) throw ParseError(lineno, "cot_text", "inconsistent with votes");
    out.push_back(std::move(s));
  }
  if (out.size() != expected) {
    throw ParseError(lineno + 1, "n_records",
                     "header declares " + std::to_string(expected) + " records, found " + std::to_string(out.size()));
  }
  if (n_classes_out) *n_classes_out = C;
  if (profile_out) *profile_out = header.value("profile", "");
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir, const std::string& digest) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  corpus.vocab.save(dir / "vocab.txt", digest);
  save_split(corpus.train, corpus, "train", dir / "train.jsonl", digest);
  save_split(corpus.eval, corpus, "eval", dir / "eval.jsonl", digest);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.vocab = Vocabulary::load(dir / "vocab.txt");
  int c_eval = 0;
  c.train = load_split(dir / "train.jsonl", c.vocab, &c.n_classes, &c.profile);
  c.eval = load_split(dir / "eval.jsonl", c.vocab, &c_eval);
  if (c_eval != c.n_classes) throw ValidationError("train and eval splits disagree on the class count");
  return c;
}

CorpusSummary summarize(std::span<const Sample> samples, int n_classes) {
  CorpusSummary s;
  s.class_votes.assign(static_cast<std::size_t>(n_classes), 0);
  s.support_histogram.assign(static_cast<std::size_t>(n_classes) + 1, 0);
  for (const auto& x : samples) {
    s.mean_entropy += x.p_gt.entropy();
    int support = 0;
    for (std::size_t c = 0; c < x.votes.size(); ++c) {
      s.class_votes[c] += x.votes.counts[c];
      support += x.votes.counts[c] > 0 ? 1 : 0;
    }
    ++s.support_histogram[static_cast<std::size_t>(support)];
  }
  s.n = samples.size();
  if (s.n) s.mean_entropy /= static_cast<double>(s.n);
  return s;
}

}  // namespace ambig
