#pragma once

#include <stdexcept>
#include <string>

namespace vtrain {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or value outside a function's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// File-system or socket failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (bad magic, corrupt payload, truncated data).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Trainer and auditor disagree on the protocol itself (operation counts,
/// wire messages, checkpoint schedule).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace vtrain
