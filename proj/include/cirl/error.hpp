#pragma once

#include <stdexcept>
#include <string>

namespace cirl {

// Base for everything thrown by this library. Catch this to distinguish
// library failures from std:: ones.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed caller input: shape mismatches, empty batches, values outside a
// documented range.
struct InvalidInputError : Error {
  using Error::Error;
};

// A configuration value that is syntactically fine but unusable, e.g. an
// unknown backbone name or a mixing strategy that cannot be satisfied by the
// batch it was given.
struct ConfigError : Error {
  using Error::Error;
};

// On-disk layout violations: manifest fields missing, directory structure not
// matching <domain>/<class>/<file>, unparseable config files.
struct SchemaError : Error {
  using Error::Error;
};

// Filesystem and decode failures.
struct IoError : Error {
  using Error::Error;
};

// Checkpoint loading: version mismatch, digest mismatch, truncated stream,
// missing weight files.
struct LoadError : Error {
  using Error::Error;
};

// Numerical preconditions violated at runtime, e.g. a feature column with
// zero variance where a caller demanded strict normalization.
struct NumericError : Error {
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInputError(msg);
}

inline void require_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace cirl
