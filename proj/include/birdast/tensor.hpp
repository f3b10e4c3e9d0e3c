#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace birdast::tensor {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Shared handle to a row-major buffer of doubles. Copies alias the same
// storage; use clone() for an independent copy.
class Tensor {
 public:
  struct Storage {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until a gradient reaches the tensor
    bool requires_grad = false;
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Storage> storage) : s_(std::move(storage)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->value.size(); }

  std::span<const double> values() const { return s_->value; }
  std::span<double> mutable_values() { return s_->value; }
  double item() const;
  double at(std::size_t i) const { return s_->value.at(i); }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }
  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const double> grad() const { return s_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  Tensor clone() const;

  const std::shared_ptr<Storage>& storage() const { return s_; }

 private:
  std::shared_ptr<Storage> s_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered record of differentiable operations. Ops record onto a tape only
// when it is recording and at least one input requires a gradient. A tape
// supports exactly one backward pass.
class GradTape {
 public:
  explicit GradTape(bool recording = true) : recording_(recording) {}
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  bool recording() const { return recording_ && !consumed_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return records_.size(); }
  // Number of records visited by the last backward pass.
  std::size_t replayed() const { return replayed_; }

  void record(std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss) = 1 and runs the records in reverse order,
  // accumulating into every tensor that requires a gradient.
  // Throws NonScalarLoss or TapeConsumed.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> records_;
  bool recording_ = true;
  bool consumed_ = false;
  std::size_t replayed_ = 0;
};

// Flat binary weight container: magic "BAWT", u32 version, u64 count, then per
// tensor u64 name length, name bytes, u64 rank, u64 dims, f64 values. All
// integers and floats little-endian.
void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

}  // namespace birdast::tensor
