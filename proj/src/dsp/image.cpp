#include <algorithm>
#include <cmath>
#include <fstream>

#include "birdast/dsp.hpp"
#include "birdast/error.hpp"

namespace birdast::dsp {

Matrix resize_bilinear(const Matrix& in, std::size_t rows, std::size_t cols) {
  if (in.empty()) throw Error(Errc::InvalidArgument, "cannot resize an empty matrix");
  if (rows == 0 || cols == 0) throw Error(Errc::InvalidArgument, "target size must be positive");

  auto source_coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    if (n_out == 1 || n_in == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  };

  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = source_coord(r, rows, in.rows);
    const auto y0 = std::min(static_cast<std::size_t>(y), in.rows - 1);
    const std::size_t y1 = std::min(y0 + 1, in.rows - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = source_coord(c, cols, in.cols);
      const auto x0 = std::min(static_cast<std::size_t>(x), in.cols - 1);
      const std::size_t x1 = std::min(x0 + 1, in.cols - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = in(y0, x0) + (in(y0, x1) - in(y0, x0)) * fx;
      const double bottom = in(y1, x0) + (in(y1, x1) - in(y1, x0)) * fx;
      out(r, c) = top + (bottom - top) * fy;
    }
  }
  return out;
}

SpectrogramImage normalize_image(const Matrix& values) {
  SpectrogramImage img;
  img.pixels = values;
  const auto [lo_it, hi_it] = std::minmax_element(values.data.begin(), values.data.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) {
    std::fill(img.pixels.data.begin(), img.pixels.data.end(), 0.5);
    return img;
  }
  const double range = hi - lo;
  for (double& v : img.pixels.data) v = std::clamp((v - lo) / range, 0.0, 1.0);
  return img;
}

SpectrogramImage to_image(const MelSpectrogram& spec) {
  if (spec.values.empty()) throw Error(Errc::InvalidArgument, "empty spectrogram");
  return normalize_image(resize_bilinear(spec.values, kImageSize, kImageSize));
}

void write_pgm(const std::filesystem::path& path, const SpectrogramImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << "P5\n" << image.pixels.cols << ' ' << image.pixels.rows << "\n255\n";
  for (double v : image.pixels.data) {
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)))));
  }
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

}  // namespace birdast::dsp
