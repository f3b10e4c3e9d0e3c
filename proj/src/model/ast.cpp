#include <cmath>

#include "birdast/error.hpp"
#include "birdast/model.hpp"
#include "birdast/ops.hpp"
#include "birdast/rng.hpp"

namespace birdast::model {
namespace {

using namespace birdast::tensor;

Tensor trunc_normal(Rng& rng, Shape shape, double sigma) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.truncated_normal(sigma);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

Tensor param_zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor param_ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

Tensor linear(GradTape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(tape, matmul(tape, x, w), b);
}

}  // namespace

void AstConfig::validate() const {
  if (patch_size == 0 || patch_stride == 0 || patch_stride > patch_size) {
    throw Error(Errc::Config, "need 0 < patch_stride <= patch_size");
  }
  if (image_size < patch_size) throw Error(Errc::Config, "image_size smaller than patch_size");
  if (embed_dim == 0 || n_heads == 0 || embed_dim % n_heads != 0) {
    throw Error(Errc::Config, "embed_dim must be a positive multiple of n_heads");
  }
  if (mlp_ratio == 0) throw Error(Errc::Config, "mlp_ratio must be positive");
  if (num_classes == 0) throw Error(Errc::Config, "num_classes must be positive");
  if (!(init_std > 0.0) || !std::isfinite(init_std)) throw Error(Errc::Config, "init_std must be positive");
  if (!std::isfinite(input_center)) throw Error(Errc::Config, "input_center must be finite");
}

std::vector<NamedTensor> AstWeights::named() const {
  std::vector<NamedTensor> out = {
      {"patch_proj", patch_proj}, {"patch_bias", patch_bias}, {"cls", cls}, {"pos", pos}};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    out.insert(out.end(), {{p + "ln1_gain", l.ln1_gain}, {p + "ln1_bias", l.ln1_bias},
                           {p + "wq", l.wq},             {p + "bq", l.bq},
                           {p + "wk", l.wk},             {p + "bk", l.bk},
                           {p + "wv", l.wv},             {p + "bv", l.bv},
                           {p + "wo", l.wo},             {p + "bo", l.bo},
                           {p + "ln2_gain", l.ln2_gain}, {p + "ln2_bias", l.ln2_bias},
                           {p + "w1", l.w1},             {p + "b1", l.b1},
                           {p + "w2", l.w2},             {p + "b2", l.b2}});
  }
  out.insert(out.end(), {{"head_norm_gain", head_norm_gain},
                         {"head_norm_bias", head_norm_bias},
                         {"head_w", head_w},
                         {"head_b", head_b}});
  return out;
}

AstWeights init_ast_weights(const AstConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const double kSigma = cfg.init_std;
  Rng rng(seed);
  const std::size_t d = cfg.embed_dim;
  const std::size_t hidden = cfg.mlp_ratio * d;

  AstWeights w;
  w.patch_proj = trunc_normal(rng, {cfg.patch_size * cfg.patch_size, d}, kSigma);
  w.patch_bias = param_zeros({d});
  w.cls = param_zeros({1, d});
  w.pos = trunc_normal(rng, {cfg.n_tokens(), d}, kSigma);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    AstLayerWeights l;
    l.ln1_gain = param_ones({d});
    l.ln1_bias = param_zeros({d});
    l.wq = trunc_normal(rng, {d, d}, kSigma);
    l.bq = param_zeros({d});
    l.wk = trunc_normal(rng, {d, d}, kSigma);
    l.bk = param_zeros({d});
    l.wv = trunc_normal(rng, {d, d}, kSigma);
    l.bv = param_zeros({d});
    l.wo = trunc_normal(rng, {d, d}, kSigma);
    l.bo = param_zeros({d});
    l.ln2_gain = param_ones({d});
    l.ln2_bias = param_zeros({d});
    l.w1 = trunc_normal(rng, {d, hidden}, kSigma);
    l.b1 = param_zeros({hidden});
    l.w2 = trunc_normal(rng, {hidden, d}, kSigma);
    l.b2 = param_zeros({d});
    w.layers.push_back(std::move(l));
  }
  w.head_norm_gain = param_ones({d});
  w.head_norm_bias = param_zeros({d});
  w.head_w = trunc_normal(rng, {d, cfg.num_classes}, kSigma);
  w.head_b = param_zeros({cfg.num_classes});
  return w;
}

Tensor patchify(const Tensor& image, const AstConfig& cfg) {
  if (image.rank() != 2 || image.dim(0) != cfg.image_size || image.dim(1) != cfg.image_size) {
    throw Error(Errc::SizeMismatch, "image " + shape_string(image.shape()) + " vs configured " +
                                        std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
  }
  const std::size_t per_axis = cfg.tokens_per_axis();
  const std::size_t ps = cfg.patch_size;
  const std::size_t side = cfg.image_size;
  const auto px = image.values();
  std::vector<double> out(cfg.n_patches() * ps * ps);
  std::size_t idx = 0;
  for (std::size_t py = 0; py < per_axis; ++py) {
    for (std::size_t pxi = 0; pxi < per_axis; ++pxi) {
      for (std::size_t i = 0; i < ps; ++i) {
        const std::size_t row = py * cfg.patch_stride + i;
        for (std::size_t j = 0; j < ps; ++j) out[idx++] = px[row * side + pxi * cfg.patch_stride + j];
      }
    }
  }
  return Tensor::from_values({cfg.n_patches(), ps * ps}, std::move(out));
}

Tensor embed(GradTape& tape, const Tensor& patches, const AstWeights& w, const AstConfig& cfg) {
  if (patches.rank() != 2 || patches.dim(1) != cfg.patch_size * cfg.patch_size) {
    throw Error(Errc::ShapeMismatch, "patches " + shape_string(patches.shape()));
  }
  if (w.pos.dim(0) != patches.dim(0) + 1) {
    throw Error(Errc::ShapeMismatch, "positional table has " + std::to_string(w.pos.dim(0)) + " rows for " +
                                         std::to_string(patches.dim(0)) + " patches");
  }
  const Tensor projected = linear(tape, patches, w.patch_proj, w.patch_bias);
  const Tensor parts[] = {w.cls, projected};
  return add(tape, concat(tape, parts, 0), w.pos);
}

Tensor encoder_forward(GradTape& tape, const Tensor& tokens, const AstWeights& w, const AstConfig& cfg,
                       const AttentionObserver& observer) {
  const std::size_t dh = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor x = tokens;
  for (std::size_t li = 0; li < w.layers.size(); ++li) {
    const AstLayerWeights& l = w.layers[li];

    const Tensor h = layer_norm(tape, x, l.ln1_gain, l.ln1_bias);
    const Tensor q = linear(tape, h, l.wq, l.bq);
    const Tensor k = linear(tape, h, l.wk, l.bk);
    const Tensor v = linear(tape, h, l.wv, l.bv);
    std::vector<Tensor> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t hi = 0; hi < cfg.n_heads; ++hi) {
      const Tensor qh = slice(tape, q, 1, hi * dh, dh);
      const Tensor kh = slice(tape, k, 1, hi * dh, dh);
      const Tensor vh = slice(tape, v, 1, hi * dh, dh);
      const Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
      const Tensor probs = softmax(tape, scores, 1);
      if (observer) observer(li, hi, probs);
      heads.push_back(matmul(tape, probs, vh));
    }
    const Tensor merged = heads.size() == 1 ? heads[0] : concat(tape, heads, 1);
    x = add(tape, x, linear(tape, merged, l.wo, l.bo));

    const Tensor h2 = layer_norm(tape, x, l.ln2_gain, l.ln2_bias);
    const Tensor mlp = linear(tape, gelu(tape, linear(tape, h2, l.w1, l.b1)), l.w2, l.b2);
    x = add(tape, x, mlp);
  }
  return x;
}

Tensor classify(GradTape& tape, const Tensor& tokens, const AstWeights& w, const AstConfig& cfg) {
  const Tensor cls = slice(tape, tokens, 0, 0, 1);
  const Tensor normed = layer_norm(tape, cls, w.head_norm_gain, w.head_norm_bias);
  const Tensor logits = linear(tape, normed, w.head_w, w.head_b);
  return sigmoid(tape, reshape(tape, logits, {cfg.num_classes}));
}

AstModel::AstModel(const AstConfig& cfg, std::uint64_t seed) : cfg_(cfg), weights_(init_ast_weights(cfg, seed)) {}

Tensor AstModel::forward(GradTape& tape, const Tensor& image) const {
  Tensor patches = patchify(image, cfg_);
  for (double& v : patches.mutable_values()) v -= cfg_.input_center;
  const Tensor tokens = embed(tape, patches, weights_, cfg_);
  return classify(tape, encoder_forward(tape, tokens, weights_, cfg_), weights_, cfg_);
}

}  // namespace birdast::model
