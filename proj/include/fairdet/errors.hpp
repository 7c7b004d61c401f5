#pragma once

#include <stdexcept>
#include <string>

namespace fairdet {

// Error hierarchy. Every failure the library reports derives from Error so
// callers (the CLI in particular) can map categories onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shapes that do not line up.
struct DimensionError : Error {
  using Error::Error;
};

// Argument outside an operation's mathematical domain (log of 0, empty
// reduction, b < 2 for SNNL, ...).
struct DomainError : Error {
  using Error::Error;
};

// NaN or infinity where finite values are required.
struct NumericError : Error {
  using Error::Error;
};

// API misuse, e.g. backward from a non-scalar root.
struct UsageError : Error {
  using Error::Error;
};

// Object state that forbids the request (all channels decoupled).
struct StateError : Error {
  using Error::Error;
};

// Metric undefined for the given input (AUC of a single-class set).
struct UndefinedMetricError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

}  // namespace fairdet
