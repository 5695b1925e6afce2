#pragma once

#include <stdexcept>

namespace radep {

/// Malformed caller input: wrong dimension, invalid class index, empty
/// split, parameter out of range.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// On-disk document problems: bad magic, unknown version, truncation,
/// missing fields.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The caller broke a sequencing contract (e.g. feeding a window a record
/// outside its interval instead of rotating first).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace radep
