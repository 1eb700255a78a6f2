// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace jelly {

// Failure categories; the CLI maps each onto a stable exit code.
enum class ErrorKind {
  kConfig,         // malformed or out-of-domain configuration / arguments
  kIo,             // filesystem problems
  kFormat,         // malformed manifest, checksum or version mismatch
  kShape,          // dimension mismatch between tensors / configs
  kIncompatible,   // checkpoint does not match the model being built
  kOverflow,       // context longer than the model supports
  kDivergence,     // NaN / inf during training
  kDomain,         // unknown category label or id
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace jelly
