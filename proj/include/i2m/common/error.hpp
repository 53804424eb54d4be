#pragma once

#include <stdexcept>
#include <string>

namespace i2m {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class ImageError : public Error {
 public:
  using Error::Error;
};

class MeshError : public Error {
 public:
  using Error::Error;
};

/// Insertion point coincides (within tolerance) with an existing vertex.
class DuplicatePointError : public MeshError {
 public:
  using MeshError::MeshError;
};

class DecompositionError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class InstrumentationError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

/// Raised by the refinement watchdog when a configured cap is exceeded.
class RefineTimeout : public Error {
 public:
  using Error::Error;
};

}  // namespace i2m
