// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rnnmod {

/// Machine-readable error categories. The CLI prints the category name and
/// derives its exit code from it.
enum class ErrorCategory {
  Parse,
  Shape,
  Version,
  Io,
  Index,
  EmptyClass,
  Mode,
  State,
  IncompatibleInput,
  VocabMismatch,
  UnknownSlot,
  UnknownLanguage,
  EmptyCorpus,
  Divergence,
  Usage,
  UnsupportedLayer,
};

inline std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Parse: return "ParseError";
    case ErrorCategory::Shape: return "ShapeError";
    case ErrorCategory::Version: return "VersionError";
    case ErrorCategory::Io: return "IoError";
    case ErrorCategory::Index: return "IndexError";
    case ErrorCategory::EmptyClass: return "EmptyClassError";
    case ErrorCategory::Mode: return "ModeError";
    case ErrorCategory::State: return "StateError";
    case ErrorCategory::IncompatibleInput: return "IncompatibleInput";
    case ErrorCategory::VocabMismatch: return "VocabMismatch";
    case ErrorCategory::UnknownSlot: return "UnknownSlot";
    case ErrorCategory::UnknownLanguage: return "UnknownLanguage";
    case ErrorCategory::EmptyCorpus: return "EmptyCorpus";
    case ErrorCategory::Divergence: return "DivergenceError";
    case ErrorCategory::Usage: return "UsageError";
    case ErrorCategory::UnsupportedLayer: return "UnsupportedLayer";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

template <ErrorCategory C>
class CategoryError : public Error {
 public:
  explicit CategoryError(const std::string& what) : Error(C, what) {}
};

using ParseError = CategoryError<ErrorCategory::Parse>;
using ShapeError = CategoryError<ErrorCategory::Shape>;
using VersionError = CategoryError<ErrorCategory::Version>;
using IoError = CategoryError<ErrorCategory::Io>;
using IndexError = CategoryError<ErrorCategory::Index>;
using EmptyClassError = CategoryError<ErrorCategory::EmptyClass>;
using ModeError = CategoryError<ErrorCategory::Mode>;
using StateError = CategoryError<ErrorCategory::State>;
using IncompatibleInput = CategoryError<ErrorCategory::IncompatibleInput>;
using VocabMismatch = CategoryError<ErrorCategory::VocabMismatch>;
using UnknownSlot = CategoryError<ErrorCategory::UnknownSlot>;
using UnknownLanguage = CategoryError<ErrorCategory::UnknownLanguage>;
using EmptyCorpus = CategoryError<ErrorCategory::EmptyCorpus>;
using DivergenceError = CategoryError<ErrorCategory::Divergence>;
using UsageError = CategoryError<ErrorCategory::Usage>;
using UnsupportedLayer = CategoryError<ErrorCategory::UnsupportedLayer>;

}  // namespace rnnmod
