#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rrf {

enum class ErrorKind {
  Layout,               // misconfigured grid (stride does not divide)
  Domain,               // argument outside the operation's domain
  AsymmetricLayout,     // mirrored position missing from layout
  DegenerateEmbedding,  // zero vector / zero mean embedding
  Incompatible,         // K, D or layout fingerprint mismatch
  DegenerateTraining,   // single-class training labels
  Data,                 // NaN / Inf / invalid values
  State,                // object used before being fitted
  Io,
  Format,               // malformed or truncated file
  LayoutIncompatible,   // embedding file fingerprint does not match layout
  Parse,                // CSV / JSON parse failure
  MissingIds,
};

std::string_view to_string(ErrorKind kind);

/// User-facing failure. Everything thrown from the library that is caused by
/// bad input carries one of these; anything else is an internal bug.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace rrf
