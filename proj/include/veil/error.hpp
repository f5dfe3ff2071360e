#pragma once

#include <stdexcept>
#include <string>

namespace veil {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape disagreements.
struct ShapeError : Error {
  using Error::Error;
};

// Bad values passed to an operation (empty batch, invalid config, ...).
struct ArgumentError : Error {
  using Error::Error;
};

// Unknown label / empty gallery.
struct LookupError : Error {
  using Error::Error;
};

// Dataset fails structural requirements (too few labels, missing members).
struct DatasetError : Error {
  using Error::Error;
};

// Genuine/impostor populations not separable.
struct CalibrationError : Error {
  using Error::Error;
};

// File format / filesystem failures.
struct IoError : Error {
  using Error::Error;
};

// Wire-protocol failures (transport, malformed payloads, version mismatch).
struct ProtocolError : Error {
  using Error::Error;
};

}  // namespace veil
