#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "birdast/log.hpp"
#include "birdast/ops.hpp"
#include "birdast/rng.hpp"
#include "birdast/tensor.hpp"

namespace birdast::testing {

using tensor::GradTape;
using tensor::Shape;
using tensor::Tensor;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("birdast-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Collects log messages instead of printing them while alive.
class CaptureLog {
 public:
  CaptureLog() {
    set_log_sink([this](LogLevel level, const std::string& msg) {
      (level == LogLevel::Warning ? warnings : infos).push_back(msg);
    });
  }
  ~CaptureLog() { set_log_sink({}); }
  CaptureLog(const CaptureLog&) = delete;
  CaptureLog& operator=(const CaptureLog&) = delete;

  std::vector<std::string> infos;
  std::vector<std::string> warnings;
};

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  std::vector<double> v(tensor::numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

using Forward = std::function<Tensor(GradTape&)>;

// Norm-wise relative error between the taped gradient and central finite
// differences of L = sum(R * f(inputs)) for a random projection R.
inline double grad_check(std::vector<Tensor> inputs, const Forward& f, std::uint64_t seed, double h = 1e-4) {
  Rng rng(seed);
  Tensor projection;
  {
    GradTape probe(false);
    const Tensor out = f(probe);
    projection = random_tensor(rng, out.shape(), -1.0, 1.0, false);
  }
  auto loss_of = [&](GradTape& tape) {
    const Tensor out = f(tape);
    return tensor::sum(tape, tensor::mul(tape, out, projection));
  };

  for (Tensor& t : inputs) t.zero_grad();
  {
    GradTape tape;
    const Tensor loss = loss_of(tape);
    tape.backward(loss);
  }
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (Tensor& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      GradTape up(false);
      const double lp = loss_of(up).item();
      values[i] = saved - h;
      GradTape down(false);
      const double lm = loss_of(down).item();
      values[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
  }
  const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return std::sqrt(diff2) / scale;
}

}  // namespace birdast::testing
