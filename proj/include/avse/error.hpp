// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace avse {

// Root of every error the library throws. Callers that only need a message
// catch this; the subclasses exist so tests and the CLI can tell failure
// classes apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class SignalTooShortError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class UsageError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class AlignmentError : public Error { using Error::Error; };
class UndefinedReferenceError : public Error { using Error::Error; };
class UndefinedDenominatorError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class TrainingError : public Error { using Error::Error; };

}  // namespace avse
