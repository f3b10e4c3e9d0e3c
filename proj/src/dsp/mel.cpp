#include <algorithm>
#include <cmath>
#include <numbers>

#include "birdast/dsp.hpp"
#include "birdast/error.hpp"

namespace birdast::dsp {
namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Integral of the unit-peak triangle (left, center, right) from -inf to x.
double triangle_cdf(double x, double left, double center, double right) {
  if (x <= left) return 0.0;
  if (x <= center) {
    const double d = x - left;
    return d * d / (2.0 * (center - left));
  }
  if (x <= right) {
    const double d = right - x;
    return 0.5 * (center - left) + 0.5 * (right - center) - d * d / (2.0 * (right - center));
  }
  return 0.5 * (right - left);
}

}  // namespace

void MelParams::validate() const {
  if (n_mels == 0) throw Error(Errc::InvalidArgument, "n_mels must be positive");
  if (sample_rate <= 0) throw Error(Errc::InvalidArgument, "sample_rate must be positive");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
    throw Error(Errc::InvalidArgument, "need 0 <= f_min < f_max <= sample_rate/2");
  }
  if (!is_power_of_two(n_fft)) throw Error(Errc::InvalidArgument, "n_fft must be a power of two");
  if (hop_length == 0 || hop_length > n_fft) {
    throw Error(Errc::InvalidArgument, "need 0 < hop_length <= n_fft");
  }
  if (!(top_db > 0.0)) throw Error(Errc::InvalidArgument, "top_db must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void fft(std::span<std::complex<double>> data) {
  const std::size_t n = data.size();
  if (!is_power_of_two(n)) throw Error(Errc::InvalidArgument, "FFT size must be a power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const std::complex<double> w = std::polar(1.0, angle * static_cast<double>(k));
        const std::complex<double> u = data[start + k];
        const std::complex<double> v = data[start + k + half] * w;
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(length));
  }
  return w;
}

Matrix stft_power(std::span<const double> samples, const MelParams& params) {
  params.validate();
  const std::size_t n_fft = params.n_fft;
  const std::size_t len = samples.size();
  if (len < n_fft) {
    throw Error(Errc::SegmentTooShort,
                std::to_string(len) + " samples, need at least n_fft=" + std::to_string(n_fft));
  }
  const std::size_t pad = n_fft / 2;
  const std::size_t n_frames = len / params.hop_length + 1;
  const std::size_t n_bins = n_fft / 2 + 1;
  const std::vector<double> window = hann_window(n_fft);

  auto padded_at = [&](std::size_t i) {
    const auto idx = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(pad);
    if (idx < 0) return samples[static_cast<std::size_t>(-idx)];
    if (idx >= static_cast<std::ptrdiff_t>(len)) {
      return samples[static_cast<std::size_t>(2 * static_cast<std::ptrdiff_t>(len - 1) - idx)];
    }
    return samples[static_cast<std::size_t>(idx)];
  };

  Matrix power(n_bins, n_frames);
  std::vector<std::complex<double>> frame(n_fft);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::size_t start = t * params.hop_length;
    for (std::size_t i = 0; i < n_fft; ++i) frame[i] = {padded_at(start + i) * window[i], 0.0};
    fft(frame);
    for (std::size_t k = 0; k < n_bins; ++k) power(k, t) = std::norm(frame[k]);
  }
  return power;
}

std::vector<double> mel_points_hz(const MelParams& params) {
  const double lo = hz_to_mel(params.f_min);
  const double hi = hz_to_mel(params.f_max);
  const std::size_t count = params.n_mels + 2;
  std::vector<double> pts(count);
  for (std::size_t i = 0; i < count; ++i) {
    pts[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  return pts;
}

Matrix mel_filterbank(const MelParams& params) {
  params.validate();
  const std::size_t n_bins = params.n_fft / 2 + 1;
  const double df = static_cast<double>(params.sample_rate) / static_cast<double>(params.n_fft);
  const std::vector<double> pts = mel_points_hz(params);

  Matrix fb(params.n_mels, n_bins);
  for (std::size_t m = 0; m < params.n_mels; ++m) {
    const double left = pts[m];
    const double center = pts[m + 1];
    const double right = pts[m + 2];
    double row_sum = 0.0;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double lo = (static_cast<double>(k) - 0.5) * df;
      const double hi = (static_cast<double>(k) + 0.5) * df;
      if (hi <= left || lo >= right) continue;
      const double w = (triangle_cdf(hi, left, center, right) - triangle_cdf(lo, left, center, right)) / df;
      fb(m, k) = w;
      row_sum += w;
    }
    if (!(row_sum > 0.0)) {
      throw Error(Errc::DegenerateBand, "mel filter " + std::to_string(m) + " covers no FFT bin");
    }
  }
  return fb;
}

DbResult power_to_db(const Matrix& power, double top_db) {
  constexpr double kEps = 1e-10;
  DbResult out;
  out.db = Matrix(power.rows, power.cols);
  double ref = 0.0;
  for (double p : power.data) {
    if (p < 0.0 || !std::isfinite(p)) throw Error(Errc::InvalidArgument, "power must be finite and >= 0");
    ref = std::max(ref, p);
  }
  if (ref == 0.0) {
    std::fill(out.db.data.begin(), out.db.data.end(), -top_db);
    out.all_zero = true;
    return out;
  }
  for (std::size_t i = 0; i < power.data.size(); ++i) {
    const double db = 10.0 * std::log10(std::max(power.data[i], kEps) / ref);
    out.db.data[i] = std::clamp(db, -top_db, 0.0);
  }
  return out;
}

MelExtractor::MelExtractor(const MelParams& params) : params_(params), filterbank_(mel_filterbank(params)) {
  support_begin_.resize(params.n_mels);
  support_end_.resize(params.n_mels);
  for (std::size_t m = 0; m < params.n_mels; ++m) {
    std::size_t b = 0;
    while (b < filterbank_.cols && filterbank_(m, b) == 0.0) ++b;
    std::size_t e = filterbank_.cols;
    while (e > b && filterbank_(m, e - 1) == 0.0) --e;
    support_begin_[m] = b;
    support_end_[m] = e;
  }
}

MelSpectrogram MelExtractor::compute(std::span<const double> samples) const {
  const Matrix power = stft_power(samples, params_);
  Matrix mel(params_.n_mels, power.cols);
  for (std::size_t m = 0; m < params_.n_mels; ++m) {
    double* row = &mel.data[m * mel.cols];
    for (std::size_t k = support_begin_[m]; k < support_end_[m]; ++k) {
      const double w = filterbank_(m, k);
      const double* prow = &power.data[k * power.cols];
      for (std::size_t t = 0; t < power.cols; ++t) row[t] += w * prow[t];
    }
  }
  DbResult db = power_to_db(mel, params_.top_db);
  return MelSpectrogram{std::move(db.db), params_, db.all_zero};
}

MelSpectrogram mel_spectrogram(std::span<const double> samples, const MelParams& params) {
  return MelExtractor(params).compute(samples);
}

}  // namespace birdast::dsp
