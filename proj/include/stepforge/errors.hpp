#pragma once

#include <stdexcept>
#include <string>

namespace stepforge {

/// Base for every error raised by the library. Callers that only care about
/// "something in the pipeline failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition of an operation was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked on an object in the wrong lifecycle state
/// (expanding a terminal node, extracting pairs from an unevaluated layer).
class StateError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

/// The generator returned an empty continuation.
class DegenerateOutputError : public Error {
 public:
  using Error::Error;
};

class DegenerateEmbeddingError : public Error {
 public:
  using Error::Error;
};

/// Judge reply could not be parsed into the expected schema.
class JudgeFormatError : public Error {
 public:
  using Error::Error;
};

/// Judge reply parsed but carried values outside the accepted band.
class JudgeRangeError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class RefinementFailedError : public Error {
 public:
  using Error::Error;
};

}  // namespace stepforge
