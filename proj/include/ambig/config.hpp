// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// key = value configuration files, and the content digest stamped on every
// artifact. Lines starting with '#' are comments.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "ambig/corpus.hpp"
#include "ambig/trainer.hpp"

namespace ambig {

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex_digest(std::uint64_t h);

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);  // ParseError on malformed lines
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void erase(const std::string& key) { values_.erase(key); }
  const std::map<std::string, std::string>& values() const { return values_; }

  // Sorted "key=value\n" lines.
  std::string canonical() const;
  std::string digest() const { return hex_digest(fnv1a64(canonical())); }

 private:
  std::map<std::string, std::string> values_;
};

// Recognised keys overwrite defaults; unknown keys are a ValidationError.
// Keys are prefixed "corpus." and "train."; other prefixes are ignored.
void apply(const KeyValueConfig& kv, CorpusConfig& config);
void apply(const KeyValueConfig& kv, TrainConfig& config);

// Fully resolved key-value view of a config.
KeyValueConfig describe(const CorpusConfig& config);
KeyValueConfig describe(const TrainConfig& config);

// Digest over the settings that determine a run's trajectory; bookkeeping
// fields (checkpoint path, stop_after, eval cadence) are excluded.
std::string config_digest(const TrainConfig& config);

}  // namespace ambig
