// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#include "ambig/vocabulary.hpp"

#include <fstream>
#include <sstream>

#include "ambig/errors.hpp"

namespace ambig {

namespace {

constexpr std::string_view kHeader = "#ambig-vocab v1";

constexpr std::array<std::string_view, Vocabulary::kMaxClasses> kClassNames = {
    "anger", "happiness", "sadness", "neutral", "disgust", "fear", "surprise", "contempt"};

constexpr std::array<std::string_view, 4> kProsodyTerms = {"volume", "speed", "pitch", "tone"};

constexpr std::array<std::array<std::string_view, Vocabulary::kLexicalPerClass>, Vocabulary::kMaxClasses>
    kLexicon = {{
        {"furious", "hate", "yell", "unfair"},
        {"great", "love", "wonderful", "laugh"},
        {"miss", "lost", "alone", "cry"},
        {"okay", "table", "today", "report"},
        {"gross", "filthy", "sick", "rotten"},
        {"scared", "danger", "afraid", "dark"},
        {"wow", "suddenly", "really", "unexpected"},
        {"pathetic", "whatever", "beneath", "ridiculous"},
    }};

constexpr std::array<std::string_view, 12> kFillers = {"i",     "you", "it",    "the", "was", "is",
                                                       "that",  "we",  "going", "to",  "there", "and"};

constexpr std::array<std::string_view, kNumSections> kMarkers = {"[TEXT]", "[AUDIO]", "[SYNTH]", "[ANSWER]"};

TokenKind parse_kind(std::string_view s) {
  for (TokenKind k : {TokenKind::Special, TokenKind::Marker, TokenKind::Word, TokenKind::Class, TokenKind::Cue,
                      TokenKind::Lexical, TokenKind::Filler}) {
    if (s == token_kind_name(k)) return k;
  }
  throw ValidationError("unknown token kind '" + std::string(s) + "'");
}

}  // namespace

const char* token_kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::Special: return "special";
    case TokenKind::Marker: return "marker";
    case TokenKind::Word: return "word";
    case TokenKind::Class: return "class";
    case TokenKind::Cue: return "cue";
    case TokenKind::Lexical: return "lexical";
    case TokenKind::Filler: return "filler";
  }
  return "?";
}

Vocabulary Vocabulary::standard() {
  std::vector<Entry> e;
  for (std::string_view s : {"<pad>", "<bos>", "<sep>", "<eoa>"}) e.push_back({std::string(s), TokenKind::Special});
  for (std::string_view s : kMarkers) e.push_back({std::string(s), TokenKind::Marker});
  for (std::string_view s : {words::kSemantic, words::kAmbiguity, words::kMajority, words::kMinority, words::kMixed,
                             words::kClear}) {
    e.push_back({std::string(s), TokenKind::Word});
  }
  for (int c = 0; c < kMaxClasses; ++c) e.push_back({std::string(kClassNames[static_cast<std::size_t>(c)]), TokenKind::Class, c});
  for (int c = 0; c < kMaxClasses; ++c) {
    for (int k = 0; k < kCuesPerClass; ++k) {
      std::string tok = "cue." + std::string(kClassNames[static_cast<std::size_t>(c)]) + "." +
                        std::string(kProsodyTerms[static_cast<std::size_t>(k) % kProsodyTerms.size()]) +
                        std::to_string(k / static_cast<int>(kProsodyTerms.size()));
      e.push_back({std::move(tok), TokenKind::Cue, c});
    }
  }
  for (int c = 0; c < kMaxClasses; ++c) {
    for (std::string_view w : kLexicon[static_cast<std::size_t>(c)]) e.push_back({std::string(w), TokenKind::Lexical, c});
  }
  for (std::string_view s : kFillers) e.push_back({std::string(s), TokenKind::Filler});
  return from_entries(std::move(e));
}

Vocabulary Vocabulary::from_entries(std::vector<Entry> entries) {
  Vocabulary v;
  v.entries_ = std::move(entries);
  v.index();
  return v;
}

void Vocabulary::index() {
  lookup_.clear();
  class_ids_.clear();
  cue_pools_.clear();
  lexicons_.clear();
  fillers_.clear();
  std::vector<std::pair<int, int>> classes;  // (group, id)
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& en = entries_[i];
    const int id = static_cast<int>(i);
    if (!lookup_.emplace(en.token, id).second) {
      throw ValidationError("duplicate token '" + en.token + "'");
    }
    if (en.kind == TokenKind::Class) classes.emplace_back(en.group, id);
  }
  auto need = [this](std::string_view t) {
    auto f = find(t);
    if (!f) throw ValidationError("vocabulary lacks required token '" + std::string(t) + "'");
    return *f;
  };
  pad_ = need("<pad>");
  bos_ = need("<bos>");
  sep_ = need("<sep>");
  eoa_ = need("<eoa>");
  for (std::size_t s = 0; s < kNumSections; ++s) markers_[s] = need(kMarkers[s]);
  for (std::string_view w : {words::kSemantic, words::kAmbiguity, words::kMajority, words::kMinority, words::kMixed,
                             words::kClear}) {
    need(w);
  }
  const std::size_t n_classes = classes.size();
  if (n_classes < 2) throw ValidationError("vocabulary needs at least 2 class tokens");
  class_ids_.assign(n_classes, -1);
  for (auto [group, id] : classes) {
    if (group < 0 || static_cast<std::size_t>(group) >= n_classes || class_ids_[static_cast<std::size_t>(group)] != -1) {
      throw ValidationError("class tokens must carry distinct groups 0..C-1");
    }
    class_ids_[static_cast<std::size_t>(group)] = id;
  }
  cue_pools_.assign(n_classes, {});
  lexicons_.assign(n_classes, {});
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& en = entries_[i];
    const bool grouped = en.kind == TokenKind::Cue || en.kind == TokenKind::Lexical;
    if (grouped && (en.group < 0 || static_cast<std::size_t>(en.group) >= n_classes)) {
      throw ValidationError("token '" + en.token + "' has no valid class group");
    }
    if (en.kind == TokenKind::Cue) cue_pools_[static_cast<std::size_t>(en.group)].push_back(static_cast<int>(i));
    if (en.kind == TokenKind::Lexical) lexicons_[static_cast<std::size_t>(en.group)].push_back(static_cast<int>(i));
    if (en.kind == TokenKind::Filler) fillers_.push_back(static_cast<int>(i));
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (cue_pools_[c].empty()) throw ValidationError("class " + entries_[static_cast<std::size_t>(class_ids_[c])].token + " has no cue tokens");
  }
  if (fillers_.empty()) throw ValidationError("vocabulary has no filler tokens");
}

int Vocabulary::id(std::string_view token) const {
  auto f = find(token);
  if (!f) throw ValidationError("unknown token '" + std::string(token) + "'");
  return *f;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = lookup_.find(std::string(token));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<Section> Vocabulary::section_of(int id) const {
  for (std::size_t s = 0; s < kNumSections; ++s) {
    if (markers_[s] == id) return static_cast<Section>(s);
  }
  return std::nullopt;
}

std::vector<int> Vocabulary::class_tokens(int n) const {
  if (n < 0 || n > num_classes()) throw ValidationError("requested " + std::to_string(n) + " classes");
  return {class_ids_.begin(), class_ids_.begin() + n};
}

std::vector<std::string> Vocabulary::class_names(int n) const {
  std::vector<std::string> out;
  for (int id : class_tokens(n)) out.push_back(token(id));
  return out;
}

std::optional<int> Vocabulary::class_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) return std::nullopt;
  const auto& en = entries_[static_cast<std::size_t>(id)];
  if (en.kind != TokenKind::Class) return std::nullopt;
  return en.group;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) ids.push_back(id(tok));
  return ids;
}

void Vocabulary::save(const std::filesystem::path& path, const std::string& digest) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write vocabulary " + path.string());
  os << kHeader << '\n';
  if (!digest.empty()) os << "# config_digest: " << digest << '\n';
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    os << i << '\t' << entries_[i].token << '\t' << token_kind_name(entries_[i].kind) << '\t' << entries_[i].group << '\n';
  }
  if (!os) throw IoError("failed writing vocabulary " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read vocabulary " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kHeader) {
    throw ParseError(1, "header", "expected '" + std::string(kHeader) + "'");
  }
  std::vector<Entry> entries;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id_s, tok, kind, group_s;
    if (!std::getline(ls, id_s, '\t')) throw ParseError(lineno, "id", "missing");
    if (!std::getline(ls, tok, '\t') || tok.empty()) throw ParseError(lineno, "token", "missing");
    if (!std::getline(ls, kind, '\t')) throw ParseError(lineno, "kind", "missing");
    if (!std::getline(ls, group_s)) throw ParseError(lineno, "group", "missing");
    Entry e;
    try {
      if (std::stoul(id_s) != entries.size()) throw ParseError(lineno, "id", "ids must be contiguous from 0");
      e.group = std::stoi(group_s);
    } catch (const std::logic_error&) {
      throw ParseError(lineno, "id", "not an integer");
    }
    e.token = tok;
    try {
      e.kind = parse_kind(kind);
    } catch (const ValidationError& err) {
      throw ParseError(lineno, "kind", err.what());
    }
    entries.push_back(std::move(e));
  }
  return from_entries(std::move(entries));
}

bool Vocabulary::operator==(const Vocabulary& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.token != b.token || a.kind != b.kind || a.group != b.group) return false;
  }
  return true;
}

}  // namespace ambig
