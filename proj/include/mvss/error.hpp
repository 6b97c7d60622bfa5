#pragma once

#include <stdexcept>
#include <string>

namespace mvss {

// Error taxonomy shared across the library. The CLI maps ConfigError to
// exit code 2 and every other failure to exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };
struct IntegrityError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace mvss
