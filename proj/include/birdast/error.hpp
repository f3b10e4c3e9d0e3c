#pragma once

#include <stdexcept>
#include <string>

namespace birdast {

enum class Errc {
  InvalidArgument,
  Io,
  UnsupportedFormat,
  CorruptHeader,
  EmptyAudio,
  SegmentTooShort,
  DegenerateBand,
  ShapeMismatch,
  SizeMismatch,
  NonFinite,
  NonScalarLoss,
  TapeConsumed,
  EmptyDataset,
  DataEmpty,
  DivergedLoss,
  Config,
};

const char* errc_name(Errc code) noexcept;

// Single exception type for the library; the code carries the category so the
// C boundary can map it onto a status value.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace birdast
