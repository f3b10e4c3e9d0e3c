#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "birdast/dsp.hpp"
#include "birdast/tensor.hpp"

namespace birdast::model {

using tensor::GradTape;
using tensor::NamedTensor;
using tensor::Tensor;

// Image as a [rows x cols] tensor without gradient.
Tensor image_tensor(const dsp::SpectrogramImage& image);

// Multi-label classifier over square single-channel images.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual std::size_t image_size() const = 0;
  // Sigmoid probabilities, shape [num_classes].
  virtual Tensor forward(GradTape& tape, const Tensor& image) const = 0;
  // Learnable tensors in a fixed order, aliasing the live weights.
  virtual std::vector<NamedTensor> parameters() const = 0;
};

// Deep copy of every parameter value.
std::vector<NamedTensor> snapshot(const Classifier& model);

// Copies values into the model's parameters by name. Missing names or shape
// differences throw Config.
void load_parameters(const Classifier& model, const std::vector<NamedTensor>& values);

// ---------------------------------------------------------------------------
// Spectrogram transformer

struct AstConfig {
  std::size_t patch_size = 16;
  std::size_t patch_stride = 10;
  std::size_t embed_dim = 768;
  std::size_t n_layers = 12;
  std::size_t n_heads = 12;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 152;
  std::size_t image_size = 224;
  // Standard deviation of the truncated-normal projections and positions.
  double init_std = 0.02;
  // Subtracted from every pixel before projection so image brightness keeps
  // its sign through the token LayerNorms.
  double input_center = 0.5;

  void validate() const;
  std::size_t tokens_per_axis() const { return (image_size - patch_size) / patch_stride + 1; }
  std::size_t n_patches() const { return tokens_per_axis() * tokens_per_axis(); }
  std::size_t n_tokens() const { return n_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / n_heads; }
};

struct AstLayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

struct AstWeights {
  Tensor patch_proj;  // [patch_size^2 x embed_dim]
  Tensor patch_bias;  // [embed_dim]
  Tensor cls;         // [1 x embed_dim]
  Tensor pos;         // [n_tokens x embed_dim]
  std::vector<AstLayerWeights> layers;
  Tensor head_norm_gain, head_norm_bias;  // [embed_dim]
  Tensor head_w;                          // [embed_dim x num_classes]
  Tensor head_b;                          // [num_classes]

  std::vector<NamedTensor> named() const;
};

// Truncated normal (sigma cfg.init_std) projections and positions, zero
// biases and CLS, unit norm gains.
AstWeights init_ast_weights(const AstConfig& cfg, std::uint64_t seed);

// [n_patches x patch_size^2]; patches in row-major order, each flattened
// row-major. Throws SizeMismatch if the image does not match cfg.image_size.
Tensor patchify(const Tensor& image, const AstConfig& cfg);

// Projects patches, prepends CLS at row 0, adds positional embeddings.
Tensor embed(GradTape& tape, const Tensor& patches, const AstWeights& w, const AstConfig& cfg);

using AttentionObserver = std::function<void(std::size_t layer, std::size_t head, const Tensor& probs)>;

// Pre-norm encoder: x += MHA(LN(x)); x += MLP(LN(x)) per layer.
Tensor encoder_forward(GradTape& tape, const Tensor& tokens, const AstWeights& w, const AstConfig& cfg,
                       const AttentionObserver& observer = {});

// sigmoid(linear(LN(token 0))), shape [num_classes].
Tensor classify(GradTape& tape, const Tensor& tokens, const AstWeights& w, const AstConfig& cfg);

class AstModel final : public Classifier {
 public:
  AstModel(const AstConfig& cfg, std::uint64_t seed);

  std::string kind() const override { return "ast"; }
  std::size_t num_classes() const override { return cfg_.num_classes; }
  std::size_t image_size() const override { return cfg_.image_size; }
  Tensor forward(GradTape& tape, const Tensor& image) const override;
  std::vector<NamedTensor> parameters() const override { return weights_.named(); }

  const AstConfig& config() const { return cfg_; }
  const AstWeights& weights() const { return weights_; }

 private:
  AstConfig cfg_;
  AstWeights weights_;
};

// ---------------------------------------------------------------------------
// EfficientNet-style convolutional baseline

struct BlockSpec {
  std::size_t expansion = 1;
  std::size_t channels = 8;
  std::size_t stride = 1;
  std::size_t kernel = 3;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct CnnConfig {
  std::size_t stem_channels = 8;
  std::vector<BlockSpec> blocks = {{1, 8, 2, 3}, {4, 16, 2, 3}, {4, 24, 2, 5}, {4, 32, 2, 3}};
  std::size_t head_channels = 64;
  std::size_t num_classes = 152;
  std::size_t image_size = 224;

  void validate() const;
};

// "e,c,s,k; e,c,s,k; ..." <-> blocks.
std::vector<BlockSpec> parse_blocks(const std::string& text);
std::string format_blocks(const std::vector<BlockSpec>& blocks);

struct BlockWeights {
  Tensor expand, expand_gain, expand_bias;  // undefined when expansion == 1
  Tensor depthwise, depthwise_gain, depthwise_bias;
  Tensor project, project_gain, project_bias;
};

struct CnnWeights {
  Tensor stem, stem_gain, stem_bias;  // stem [stem_channels x 1 x 3 x 3], stride 2
  std::vector<BlockWeights> blocks;
  Tensor head, head_gain, head_bias;  // 1x1 conv
  Tensor classifier_w;                // [head_channels x num_classes]
  Tensor classifier_b;                // [num_classes]

  std::vector<NamedTensor> named() const;
};

CnnWeights init_cnn_weights(const CnnConfig& cfg, std::uint64_t seed);

// 1x1 expand -> depthwise k x k at stride -> 1x1 project, each normalized;
// swish after expand and depthwise only. Residual iff stride 1 and equal
// channels.
Tensor mbconv_block(GradTape& tape, const Tensor& input, const BlockWeights& w, const BlockSpec& spec);

// stem -> blocks -> head conv -> global average pool -> linear -> sigmoid.
Tensor cnn_forward(GradTape& tape, const Tensor& image, const CnnWeights& w, const CnnConfig& cfg);

class CnnModel final : public Classifier {
 public:
  CnnModel(const CnnConfig& cfg, std::uint64_t seed);

  std::string kind() const override { return "cnn"; }
  std::size_t num_classes() const override { return cfg_.num_classes; }
  std::size_t image_size() const override { return cfg_.image_size; }
  Tensor forward(GradTape& tape, const Tensor& image) const override;
  std::vector<NamedTensor> parameters() const override { return weights_.named(); }

  const CnnConfig& config() const { return cfg_; }
  const CnnWeights& weights() const { return weights_; }

 private:
  CnnConfig cfg_;
  CnnWeights weights_;
};

}  // namespace birdast::model
