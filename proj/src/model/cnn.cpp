#include <cmath>
#include <sstream>

#include "birdast/error.hpp"
#include "birdast/model.hpp"
#include "birdast/ops.hpp"
#include "birdast/rng.hpp"

namespace birdast::model {
namespace {

using namespace birdast::tensor;

constexpr std::size_t kStemKernel = 3;
constexpr std::size_t kStemStride = 2;

Tensor he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.truncated_normal(sigma);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

Tensor conv_norm(GradTape& tape, const Tensor& x, const Tensor& kernel, std::size_t stride, const Tensor& gain,
                 const Tensor& bias) {
  return channel_norm(tape, conv2d(tape, x, kernel, stride), gain, bias);
}

}  // namespace

void CnnConfig::validate() const {
  if (stem_channels == 0 || head_channels == 0) throw Error(Errc::Config, "channel counts must be positive");
  if (blocks.empty()) throw Error(Errc::Config, "need at least one MBConv block");
  for (const BlockSpec& b : blocks) {
    if (b.stride != 1 && b.stride != 2) throw Error(Errc::Config, "block stride must be 1 or 2");
    if (b.kernel % 2 == 0) throw Error(Errc::Config, "block kernel size must be odd");
    if (b.expansion == 0 || b.channels == 0) throw Error(Errc::Config, "block expansion/channels must be positive");
  }
  if (num_classes == 0) throw Error(Errc::Config, "num_classes must be positive");
  if (image_size == 0) throw Error(Errc::Config, "image_size must be positive");
}

std::vector<BlockSpec> parse_blocks(const std::string& text) {
  std::vector<BlockSpec> blocks;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ';')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::stringstream fields(item);
    BlockSpec b;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(fields >> b.expansion >> c1 >> b.channels >> c2 >> b.stride >> c3 >> b.kernel) || c1 != ',' ||
        c2 != ',' || c3 != ',') {
      throw Error(Errc::Config, "bad block spec '" + item + "', expected expansion,channels,stride,kernel");
    }
    std::string rest;
    if (fields >> rest) throw Error(Errc::Config, "trailing text in block spec '" + item + "'");
    blocks.push_back(b);
  }
  return blocks;
}

std::string format_blocks(const std::vector<BlockSpec>& blocks) {
  std::string s;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockSpec& b = blocks[i];
    if (i) s += "; ";
    s += std::to_string(b.expansion) + "," + std::to_string(b.channels) + "," + std::to_string(b.stride) + "," +
         std::to_string(b.kernel);
  }
  return s;
}

std::vector<NamedTensor> CnnWeights::named() const {
  std::vector<NamedTensor> out = {{"stem", stem}, {"stem_gain", stem_gain}, {"stem_bias", stem_bias}};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockWeights& b = blocks[i];
    const std::string p = "block" + std::to_string(i) + ".";
    if (b.expand.defined()) {
      out.insert(out.end(),
                 {{p + "expand", b.expand}, {p + "expand_gain", b.expand_gain}, {p + "expand_bias", b.expand_bias}});
    }
    out.insert(out.end(), {{p + "depthwise", b.depthwise},
                           {p + "depthwise_gain", b.depthwise_gain},
                           {p + "depthwise_bias", b.depthwise_bias},
                           {p + "project", b.project},
                           {p + "project_gain", b.project_gain},
                           {p + "project_bias", b.project_bias}});
  }
  out.insert(out.end(), {{"head", head},
                         {"head_gain", head_gain},
                         {"head_bias", head_bias},
                         {"classifier_w", classifier_w},
                         {"classifier_b", classifier_b}});
  return out;
}

CnnWeights init_cnn_weights(const CnnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  auto ones = [](std::size_t n) { return Tensor::full({n}, 1.0, true); };
  auto zeros = [](std::size_t n) { return Tensor::zeros({n}, true); };

  CnnWeights w;
  w.stem = he_normal(rng, {cfg.stem_channels, 1, kStemKernel, kStemKernel}, kStemKernel * kStemKernel);
  w.stem_gain = ones(cfg.stem_channels);
  w.stem_bias = zeros(cfg.stem_channels);
  std::size_t in = cfg.stem_channels;
  for (const BlockSpec& spec : cfg.blocks) {
    BlockWeights b;
    const std::size_t expanded = in * spec.expansion;
    if (spec.expansion != 1) {
      b.expand = he_normal(rng, {expanded, in, 1, 1}, in);
      b.expand_gain = ones(expanded);
      b.expand_bias = zeros(expanded);
    }
    b.depthwise = he_normal(rng, {expanded, spec.kernel, spec.kernel}, spec.kernel * spec.kernel);
    b.depthwise_gain = ones(expanded);
    b.depthwise_bias = zeros(expanded);
    b.project = he_normal(rng, {spec.channels, expanded, 1, 1}, expanded);
    b.project_gain = ones(spec.channels);
    b.project_bias = zeros(spec.channels);
    w.blocks.push_back(std::move(b));
    in = spec.channels;
  }
  w.head = he_normal(rng, {cfg.head_channels, in, 1, 1}, in);
  w.head_gain = ones(cfg.head_channels);
  w.head_bias = zeros(cfg.head_channels);
  {
    const double sigma = 1.0 / std::sqrt(static_cast<double>(cfg.head_channels));
    std::vector<double> v(cfg.head_channels * cfg.num_classes);
    for (double& x : v) x = rng.truncated_normal(sigma);
    w.classifier_w = Tensor::from_values({cfg.head_channels, cfg.num_classes}, std::move(v), true);
  }
  w.classifier_b = zeros(cfg.num_classes);
  return w;
}

Tensor mbconv_block(GradTape& tape, const Tensor& input, const BlockWeights& w, const BlockSpec& spec) {
  if (input.rank() != 3) throw Error(Errc::ShapeMismatch, "mbconv input " + shape_string(input.shape()));
  const std::size_t in_channels = input.dim(0);
  const std::size_t expect_in = w.expand.defined() ? w.expand.dim(1) : w.depthwise.dim(0);
  if (in_channels != expect_in) {
    throw Error(Errc::ShapeMismatch, "mbconv block expects " + std::to_string(expect_in) + " channels, got " +
                                         std::to_string(in_channels));
  }
  Tensor x = input;
  if (w.expand.defined()) x = swish(tape, conv_norm(tape, x, w.expand, 1, w.expand_gain, w.expand_bias));
  x = swish(tape, channel_norm(tape, depthwise_conv2d(tape, x, w.depthwise, spec.stride), w.depthwise_gain,
                               w.depthwise_bias));
  x = conv_norm(tape, x, w.project, 1, w.project_gain, w.project_bias);
  if (spec.stride == 1 && in_channels == spec.channels) x = add(tape, x, input);
  return x;
}

Tensor cnn_forward(GradTape& tape, const Tensor& image, const CnnWeights& w, const CnnConfig& cfg) {
  if (image.rank() != 2 || image.dim(0) != cfg.image_size || image.dim(1) != cfg.image_size) {
    throw Error(Errc::SizeMismatch, "image " + shape_string(image.shape()) + " vs configured " +
                                        std::to_string(cfg.image_size));
  }
  Tensor x = reshape(tape, image, {1, image.dim(0), image.dim(1)});
  x = swish(tape, conv_norm(tape, x, w.stem, kStemStride, w.stem_gain, w.stem_bias));
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) x = mbconv_block(tape, x, w.blocks[i], cfg.blocks[i]);
  x = swish(tape, conv_norm(tape, x, w.head, 1, w.head_gain, w.head_bias));
  const Tensor pooled = reshape(tape, global_avg_pool(tape, x), {1, cfg.head_channels});
  const Tensor logits = add_bias(tape, matmul(tape, pooled, w.classifier_w), w.classifier_b);
  return sigmoid(tape, reshape(tape, logits, {cfg.num_classes}));
}

CnnModel::CnnModel(const CnnConfig& cfg, std::uint64_t seed) : cfg_(cfg), weights_(init_cnn_weights(cfg, seed)) {}

Tensor CnnModel::forward(GradTape& tape, const Tensor& image) const {
  return cnn_forward(tape, image, weights_, cfg_);
}

}  // namespace birdast::model
