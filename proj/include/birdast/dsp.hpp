#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "birdast/matrix.hpp"

namespace birdast::dsp {

struct MelParams {
  std::size_t n_mels = 128;
  double f_min = 20.0;
  double f_max = 16000.0;
  int sample_rate = 32000;
  std::size_t n_fft = 512;
  std::size_t hop_length = 320;
  double top_db = 80.0;

  // Throws InvalidArgument when the parameters are inconsistent.
  void validate() const;
};

inline constexpr std::size_t kImageSize = 224;

struct MelSpectrogram {
  Matrix values;  // [n_mels x n_frames], dB relative to the global maximum
  MelParams params;
  bool all_zero_input = false;
};

// Pixels in [0, 1], [kImageSize x kImageSize] unless produced by resize_image.
struct SpectrogramImage {
  Matrix pixels;
};

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// In-place iterative radix-2 FFT; size must be a power of two.
void fft(std::span<std::complex<double>> data);

// Periodic Hann window of the given length.
std::vector<double> hann_window(std::size_t length);

// Squared magnitude of the one-sided DFT of centered, reflect-padded,
// Hann-windowed frames. Result is [n_fft/2 + 1 x floor(len/hop) + 1].
Matrix stft_power(std::span<const double> samples, const MelParams& params);

// Triangular filters with centers equally spaced in mel between f_min and
// f_max. Each FFT bin is treated as the frequency cell
// [f_k - df/2, f_k + df/2] and receives the triangle's mean over that cell, so
// narrow low-frequency filters still cover at least one bin.
Matrix mel_filterbank(const MelParams& params);

// Mel-scale frequencies (Hz) of the n_mels + 2 filter edge/center points.
std::vector<double> mel_points_hz(const MelParams& params);

struct DbResult {
  Matrix db;
  bool all_zero = false;
};

// 10 log10(max(p, 1e-10) / max(p)), clamped to [-top_db, 0]. All-zero power
// yields a uniform -top_db matrix with the flag set.
DbResult power_to_db(const Matrix& power, double top_db = 80.0);

// Reusable extractor; holds the filterbank and window so repeated calls share
// them read-only.
class MelExtractor {
 public:
  explicit MelExtractor(const MelParams& params);

  MelSpectrogram compute(std::span<const double> samples) const;
  const Matrix& filterbank() const { return filterbank_; }
  const MelParams& params() const { return params_; }

 private:
  MelParams params_;
  Matrix filterbank_;
  std::vector<std::size_t> support_begin_;
  std::vector<std::size_t> support_end_;
};

MelSpectrogram mel_spectrogram(std::span<const double> samples, const MelParams& params);

// Corner-aligned bilinear resize.
Matrix resize_bilinear(const Matrix& in, std::size_t rows, std::size_t cols);

// Resize to kImageSize x kImageSize then per-image min-max normalize; a
// constant input becomes all 0.5.
SpectrogramImage to_image(const MelSpectrogram& spec);
SpectrogramImage normalize_image(const Matrix& values);

// Binary PGM (P5), 8-bit, pixel = round(255 v).
void write_pgm(const std::filesystem::path& path, const SpectrogramImage& image);

}  // namespace birdast::dsp
