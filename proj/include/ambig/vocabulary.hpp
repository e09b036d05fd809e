// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ambig {

enum class TokenKind { Special, Marker, Word, Class, Cue, Lexical, Filler };

const char* token_kind_name(TokenKind kind);

// The four CoT sections, in their required order.
enum class Section : int { Text = 0, Audio = 1, Synthesis = 2, Answer = 3 };
inline constexpr std::size_t kNumSections = 4;

// Token inventory shared by every corpus profile. Classes are indexed in a
// fixed order so that a C-class profile uses the first C of them.
class Vocabulary {
 public:
  struct Entry {
    std::string token;
    TokenKind kind = TokenKind::Word;
    int group = -1;  // class index for Class/Cue/Lexical tokens
  };

  static constexpr int kMaxClasses = 8;
  static constexpr int kCuesPerClass = 8;
  static constexpr int kLexicalPerClass = 4;

  // The built-in vocabulary covering all kMaxClasses emotion classes.
  static Vocabulary standard();
  static Vocabulary from_entries(std::vector<Entry> entries);

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(int id) const { return entries_.at(static_cast<std::size_t>(id)); }
  const std::string& token(int id) const { return entry(id).token; }
  int id(std::string_view token) const;  // throws ValidationError when absent
  std::optional<int> find(std::string_view token) const;

  int pad() const { return pad_; }
  int bos() const { return bos_; }
  int sep() const { return sep_; }
  int eoa() const { return eoa_; }
  int marker(Section s) const { return markers_[static_cast<std::size_t>(s)]; }
  std::optional<Section> section_of(int id) const;

  int num_classes() const { return static_cast<int>(class_ids_.size()); }
  int class_token(int c) const { return class_ids_.at(static_cast<std::size_t>(c)); }
  // Ids of the first `n` class tokens.
  std::vector<int> class_tokens(int n) const;
  std::vector<std::string> class_names(int n) const;
  // Class index of a class-name token, if it is one.
  std::optional<int> class_of(int id) const;
  const std::vector<int>& cue_pool(int c) const { return cue_pools_.at(static_cast<std::size_t>(c)); }
  const std::vector<int>& lexicon(int c) const { return lexicons_.at(static_cast<std::size_t>(c)); }
  const std::vector<int>& fillers() const { return fillers_; }

  std::string decode(const std::vector<int>& ids) const;  // space-joined tokens
  std::vector<int> encode(std::string_view text) const;   // whitespace-split tokens

  // `digest`, when given, is written as a "# config_digest:" comment line.
  void save(const std::filesystem::path& path, const std::string& digest = {}) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const;

 private:
  void index();

  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> lookup_;
  int pad_ = -1, bos_ = -1, sep_ = -1, eoa_ = -1;
  std::array<int, kNumSections> markers_{-1, -1, -1, -1};
  std::vector<int> class_ids_;
  std::vector<std::vector<int>> cue_pools_;
  std::vector<std::vector<int>> lexicons_;
  std::vector<int> fillers_;
};

// Reasoning vocabulary used by the CoT templates.
namespace words {
inline constexpr std::string_view kSemantic = "semantic";
inline constexpr std::string_view kAmbiguity = "ambiguity";
inline constexpr std::string_view kMajority = "majority";
inline constexpr std::string_view kMinority = "minority";
inline constexpr std::string_view kMixed = "mixed";
inline constexpr std::string_view kClear = "clear";
}  // namespace words

}  // namespace ambig
