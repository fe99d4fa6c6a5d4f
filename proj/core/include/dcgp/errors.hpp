#pragma once

#include <stdexcept>
#include <string>

namespace dcgp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};
struct NotPositiveDefinite : Error {
  using Error::Error;
};
struct PatchTooLarge : Error {
  using Error::Error;
};
struct NegativeVariance : Error {
  using Error::Error;
};
struct LabelOutOfRange : Error {
  using Error::Error;
};
struct NonFiniteGradient : Error {
  using Error::Error;
};
struct InsufficientPatches : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct BadMagic : Error {
  using Error::Error;
};
struct TruncatedFile : Error {
  using Error::Error;
};
struct CountMismatch : Error {
  using Error::Error;
};
struct ZeroVariance : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace dcgp
