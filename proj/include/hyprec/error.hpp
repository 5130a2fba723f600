#pragma once

#include <stdexcept>
#include <string>

namespace hyprec {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file; message carries the offending line number.
struct ParseError : Error {
  using Error::Error;
};

// Bad configuration key or value.
struct ConfigError : Error {
  using Error::Error;
};

// Unknown user/item/entity/relation id.
struct LookupError : Error {
  using Error::Error;
};

// Non-finite gradient or loss encountered during training.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace hyprec
