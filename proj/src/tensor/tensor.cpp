#include "birdast/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "birdast/error.hpp"

namespace birdast::tensor {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto s = std::make_shared<Storage>();
  s->value.assign(tensor::numel(shape), value);
  s->shape = std::move(shape);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (tensor::numel(shape) != values.size()) {
    throw Error(Errc::ShapeMismatch, shape_string(shape) + " does not hold " +
                                         std::to_string(values.size()) + " values");
  }
  auto s = std::make_shared<Storage>();
  s->shape = std::move(shape);
  s->value = std::move(values);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value) { return from_values({}, {value}); }

double Tensor::item() const {
  if (numel() != 1) throw Error(Errc::ShapeMismatch, "item() on " + shape_string(shape()));
  return s_->value[0];
}

std::span<double> Tensor::mutable_grad() {
  if (s_->grad.empty()) s_->grad.assign(s_->value.size(), 0.0);
  return s_->grad;
}

void Tensor::zero_grad() { std::fill(s_->grad.begin(), s_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
  auto s = std::make_shared<Storage>(*s_);
  return Tensor(std::move(s));
}

void GradTape::record(std::function<void()> backward_fn) {
  if (consumed_) throw Error(Errc::TapeConsumed, "cannot record onto a consumed tape");
  records_.push_back(std::move(backward_fn));
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw Error(Errc::TapeConsumed, "backward already ran on this tape");
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(Errc::NonScalarLoss,
                "loss has shape " + (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  consumed_ = true;
  replayed_ = 0;
  if (loss.requires_grad()) {
    Tensor seed = loss;
    seed.mutable_grad()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      (*it)();
      ++replayed_;
    }
  }
  records_.clear();
  records_.shrink_to_fit();
}

namespace {

constexpr char kMagic[4] = {'B', 'A', 'W', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw Error(Errc::CorruptHeader, "truncated weight file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(kMagic, 4);
  const char version[4] = {static_cast<char>(kVersion), 0, 0, 0};
  out.write(version, 4);
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, t.rank());
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  char magic[4];
  unsigned char version[4];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(version), 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error(Errc::CorruptHeader, "not a weight file");
  const std::uint32_t v = version[0] | (version[1] << 8) | (version[2] << 16) |
                          (static_cast<std::uint32_t>(version[3]) << 24);
  if (v != kVersion) throw Error(Errc::UnsupportedFormat, "weight file version " + std::to_string(v));

  const std::uint64_t count = get_u64(in);
  std::vector<NamedTensor> tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = get_u64(in);
    if (name_len > 4096) throw Error(Errc::CorruptHeader, "implausible tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rank = get_u64(in);
    if (rank > 8) throw Error(Errc::CorruptHeader, "implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(in);
    std::vector<double> values(numel(shape));
    for (auto& x : values) x = std::bit_cast<double>(get_u64(in));
    tensors.push_back({std::move(name), Tensor::from_values(std::move(shape), std::move(values))});
  }
  return tensors;
}

}  // namespace birdast::tensor
