// Copyright (c) 2026, the ambig authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every module. The CLI maps ValidationError
// to exit code 1 and everything else to exit code 2.

#pragma once

#include <stdexcept>
#include <string>

namespace ambig {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// A sample that cannot support a reasoning trajectory (e.g. no cue tokens).
class DegenerateSampleError : public Error {
 public:
  using Error::Error;
};

// Bad user-supplied configuration or flags.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// NaN or infinity where a finite number is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed persisted data; carries the 1-based line and the offending field.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& what)
      : Error("line " + std::to_string(line) + ", field '" + field + "': " + what),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

}  // namespace ambig
