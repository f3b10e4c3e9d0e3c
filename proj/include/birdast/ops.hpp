#pragma once

#include <span>

#include "birdast/tensor.hpp"

namespace birdast::tensor {

// Every op checks that its output is finite and throws NonFinite otherwise.
// Shape problems throw ShapeMismatch.

Tensor matmul(GradTape& tape, const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(GradTape& tape, const Tensor& x);                // 2-D only

Tensor add(GradTape& tape, const Tensor& a, const Tensor& b);
Tensor mul(GradTape& tape, const Tensor& a, const Tensor& b);
Tensor scale(GradTape& tape, const Tensor& x, double factor);
// Adds a vector of length last-dim to every row. The only broadcast supported.
Tensor add_bias(GradTape& tape, const Tensor& x, const Tensor& bias);

Tensor reshape(GradTape& tape, const Tensor& x, Shape shape);
Tensor slice(GradTape& tape, const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(GradTape& tape, std::span<const Tensor> parts, std::size_t axis);

Tensor softmax(GradTape& tape, const Tensor& x, std::size_t axis);
// Normalizes over the last axis.
Tensor layer_norm(GradTape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor gelu(GradTape& tape, const Tensor& x);  // tanh approximation
Tensor sigmoid(GradTape& tape, const Tensor& x);
Tensor swish(GradTape& tape, const Tensor& x);

Tensor sum(GradTape& tape, const Tensor& x);
Tensor mean(GradTape& tape, const Tensor& x);

// -mean(t ln p + (1 - t) ln(1 - p)) with p clamped to [1e-7, 1 - 1e-7].
Tensor binary_cross_entropy(GradTape& tape, const Tensor& probs, const Tensor& targets);

// Convolutions over [C, H, W] maps with zero "same" padding: output spatial
// size is ceil(size / stride); odd padding puts the extra row/col at the end.
Tensor conv2d(GradTape& tape, const Tensor& input, const Tensor& kernel, std::size_t stride);  // kernel [O, C, k, k]
Tensor depthwise_conv2d(GradTape& tape, const Tensor& input, const Tensor& kernel,
                        std::size_t stride);  // kernel [C, k, k]
// Per-sample, per-channel normalization over H x W followed by a per-channel affine.
Tensor channel_norm(GradTape& tape, const Tensor& input, const Tensor& gain, const Tensor& bias,
                    double eps = 1e-5);
Tensor global_avg_pool(GradTape& tape, const Tensor& input);  // [C, H, W] -> [C]

}  // namespace birdast::tensor
