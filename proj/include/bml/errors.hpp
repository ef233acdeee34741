#pragma once

#include <stdexcept>
#include <string>

namespace bml {

// Base class for all library errors. The CLI maps these to machine-readable
// error objects keyed by kind().
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "Error"; }
};

// Bad or mutually inconsistent configuration fields. Messages name the field.
struct ConfigInvalid : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "ConfigInvalid"; }
};

// An observation with probability zero under every atom of the prior.
struct ZeroLikelihood : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "ZeroLikelihood"; }
};

// The planning recursion visited more states than the configured cap.
struct StateSpaceExceeded : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "StateSpaceExceeded"; }
};

// A value-table lookup for a state the table does not contain.
struct UnknownState : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "UnknownState"; }
};

// KL divergence query q in {0,1} with p != q.
struct DivergenceInfinite : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "DivergenceInfinite"; }
};

// An index was requested for a channel that has never been sensed.
struct UninitializedChannel : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "UninitializedChannel"; }
};

// Every channel has zero availability; no allocation problem to solve.
struct AllChannelsBusy : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "AllChannelsBusy"; }
};

// A file could not be read or written, or an emitter was given nothing to
// write.
struct IoError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "IoError"; }
};

}  // namespace bml
