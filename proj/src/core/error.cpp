#include "birdast/error.hpp"

namespace birdast {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "IoError";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::CorruptHeader: return "CorruptHeader";
    case Errc::EmptyAudio: return "EmptyAudio";
    case Errc::SegmentTooShort: return "SegmentTooShort";
    case Errc::DegenerateBand: return "DegenerateBand";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::NonFinite: return "NonFinite";
    case Errc::NonScalarLoss: return "NonScalarLoss";
    case Errc::TapeConsumed: return "TapeConsumed";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::DataEmpty: return "DataEmpty";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::Config: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace birdast
