#include "birdast/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "birdast/error.hpp"

namespace birdast::tensor {
namespace {

using StoragePtr = std::shared_ptr<Tensor::Storage>;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw Error(Errc::ShapeMismatch, op + ": " + detail);
}

bool wants_grad(const GradTape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_output(const char* op, Shape shape, std::vector<double> values, bool requires_grad) {
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(Errc::NonFinite, std::string(op) + " produced a non-finite value");
  }
  auto s = std::make_shared<Tensor::Storage>();
  s->shape = std::move(shape);
  s->value = std::move(values);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

std::vector<double>& grad_of(const StoragePtr& s) {
  if (s->grad.empty()) s->grad.assign(s->value.size(), 0.0);
  return s->grad;
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Row normalization shared by layer_norm (affine per column) and channel_norm
// (affine per row).
struct RowStats {
  std::vector<double> xhat;
  std::vector<double> rstd;
};

RowStats normalize_rows(const std::vector<double>& x, std::size_t rows, std::size_t cols, double eps) {
  RowStats st;
  st.xhat.resize(x.size());
  st.rstd.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x[r * cols];
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    const double rstd = 1.0 / std::sqrt(var + eps);
    st.rstd[r] = rstd;
    for (std::size_t c = 0; c < cols; ++c) st.xhat[r * cols + c] = (xr[c] - mu) * rstd;
  }
  return st;
}

// dx for one row given dxhat.
void normalize_rows_backward(const double* dxhat, const double* xhat, double rstd, std::size_t cols,
                             double* dx) {
  double mean_d = 0.0;
  double mean_dx = 0.0;
  for (std::size_t c = 0; c < cols; ++c) {
    mean_d += dxhat[c];
    mean_dx += dxhat[c] * xhat[c];
  }
  mean_d /= static_cast<double>(cols);
  mean_dx /= static_cast<double>(cols);
  for (std::size_t c = 0; c < cols; ++c) dx[c] += rstd * (dxhat[c] - mean_d - xhat[c] * mean_dx);
}

struct ConvGeometry {
  std::size_t in_h, in_w, out_h, out_w, k, stride, pad_top, pad_left;
};

ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t k, std::size_t stride) {
  ConvGeometry g{};
  g.in_h = h;
  g.in_w = w;
  g.k = k;
  g.stride = stride;
  g.out_h = (h + stride - 1) / stride;
  g.out_w = (w + stride - 1) / stride;
  const std::size_t need_h = (g.out_h - 1) * stride + k;
  const std::size_t need_w = (g.out_w - 1) * stride + k;
  g.pad_top = need_h > h ? (need_h - h) / 2 : 0;
  g.pad_left = need_w > w ? (need_w - w) / 2 : 0;
  return g;
}

// Output index range [lo, hi) whose input coordinate out*stride + tap - pad
// lands inside [0, size).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out_size, std::size_t in_size, std::size_t tap,
                                                std::size_t pad, std::size_t stride) {
  const auto t = static_cast<std::ptrdiff_t>(tap) - static_cast<std::ptrdiff_t>(pad);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = t >= 0 ? 0 : (-t + s - 1) / s;
  std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(in_size) - 1 - t);
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_size));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Accumulates one input plane through one k x k kernel into one output plane.
void conv_plane(const double* in, const double* kern, double* out, const ConvGeometry& g) {
  for (std::size_t ki = 0; ki < g.k; ++ki) {
    const auto [oy0, oy1] = valid_range(g.out_h, g.in_h, ki, g.pad_top, g.stride);
    for (std::size_t kj = 0; kj < g.k; ++kj) {
      const double w = kern[ki * g.k + kj];
      if (w == 0.0) continue;
      const auto [ox0, ox1] = valid_range(g.out_w, g.in_w, kj, g.pad_left, g.stride);
      if (ox0 == ox1) continue;
      for (std::size_t oy = oy0; oy < oy1; ++oy) {
        const std::size_t iy = oy * g.stride + ki - g.pad_top;
        const double* ip = in + iy * g.in_w + (ox0 * g.stride + kj - g.pad_left);
        double* orow = out + oy * g.out_w;
        if (g.stride == 1) {
          for (std::size_t ox = ox0; ox < ox1; ++ox, ++ip) orow[ox] += w * *ip;
        } else {
          for (std::size_t ox = ox0; ox < ox1; ++ox, ip += g.stride) orow[ox] += w * *ip;
        }
      }
    }
  }
}

// Backward of conv_plane: accumulates into d_in and d_kern.
void conv_plane_backward(const double* in, const double* kern, const double* d_out, double* d_in,
                         double* d_kern, const ConvGeometry& g) {
  for (std::size_t ki = 0; ki < g.k; ++ki) {
    const auto [oy0, oy1] = valid_range(g.out_h, g.in_h, ki, g.pad_top, g.stride);
    for (std::size_t kj = 0; kj < g.k; ++kj) {
      const double w = kern[ki * g.k + kj];
      const auto [ox0, ox1] = valid_range(g.out_w, g.in_w, kj, g.pad_left, g.stride);
      double dw = 0.0;
      if (ox0 == ox1) continue;
      for (std::size_t oy = oy0; oy < oy1; ++oy) {
        const std::size_t iy = oy * g.stride + ki - g.pad_top;
        const std::size_t base = iy * g.in_w + (ox0 * g.stride + kj - g.pad_left);
        const double* drow = d_out + oy * g.out_w;
        const double* ip = in + base;
        if (d_in != nullptr) {
          double* dip = d_in + base;
          for (std::size_t ox = ox0; ox < ox1; ++ox, ip += g.stride, dip += g.stride) {
            dw += drow[ox] * *ip;
            *dip += w * drow[ox];
          }
        } else {
          for (std::size_t ox = ox0; ox < ox1; ++ox, ip += g.stride) dw += drow[ox] * *ip;
        }
      }
      if (d_kern != nullptr) d_kern[ki * g.k + kj] += dw;
    }
  }
}

}  // namespace

Tensor matmul(GradTape& tape, const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul", shape_string(a.shape()) + " x " + shape_string(b.shape()));

  std::vector<double> c(m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor out = make_output("matmul", {m, n}, std::move(c), rg);
  if (rg) {
    tape.record([o = out.storage(), as = a.storage(), bs = b.storage(), m, k, n] {
      if (o->grad.empty()) return;
      const double* dC = o->grad.data();
      if (as->requires_grad) {
        double* dA = grad_of(as).data();
        const double* B = bs->value.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* drow = dC + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = B + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
            dA[i * k + p] += acc;
          }
        }
      }
      if (bs->requires_grad) {
        double* dB = grad_of(bs).data();
        const double* A = as->value.data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* drow = dC + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            double* dbrow = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += aip * drow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(GradTape& tape, const Tensor& x) {
  require_rank("transpose", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> y(r * c);
  const auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = xv[i * c + j];
  const bool rg = wants_grad(tape, {&x});
  Tensor out = make_output("transpose", {c, r}, std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage(), r, c] {
      if (o->grad.empty()) return;
      auto& dx = grad_of(xs);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += o->grad[j * r + i];
    });
  }
  return out;
}

Tensor add(GradTape& tape, const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> y(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor out = make_output("add", a.shape(), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), as = a.storage(), bs = b.storage()] {
      if (o->grad.empty()) return;
      for (const auto& s : {as, bs}) {
        if (!s->requires_grad) continue;
        auto& g = grad_of(s);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(GradTape& tape, const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> y(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor out = make_output("mul", a.shape(), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), as = a.storage(), bs = b.storage()] {
      if (o->grad.empty()) return;
      if (as->requires_grad) {
        auto& g = grad_of(as);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * bs->value[i];
      }
      if (bs->requires_grad) {
        auto& g = grad_of(bs);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * as->value[i];
      }
    });
  }
  return out;
}

Tensor scale(GradTape& tape, const Tensor& x, double factor) {
  std::vector<double> y(x.values().begin(), x.values().end());
  for (double& v : y) v *= factor;
  const bool rg = wants_grad(tape, {&x});
  Tensor out = make_output("scale", x.shape(), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage(), factor] {
      if (o->grad.empty()) return;
      auto& g = grad_of(xs);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * factor;
    });
  }
  return out;
}

Tensor add_bias(GradTape& tape, const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    shape_error("add_bias", shape_string(x.shape()) + " + " + shape_string(bias.shape()));
  }
  const std::size_t n = bias.dim(0);
  const std::size_t rows = x.numel() / n;
  std::vector<double> y(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] += bv[j];
  const bool rg = wants_grad(tape, {&x, &bias});
  Tensor out = make_output("add_bias", x.shape(), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage(), bs = bias.storage(), rows, n] {
      if (o->grad.empty()) return;
      if (xs->requires_grad) {
        auto& g = grad_of(xs);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (bs->requires_grad) {
        auto& g = grad_of(bs);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) g[j] += o->grad[r * n + j];
      }
    });
  }
  return out;
}

Tensor reshape(GradTape& tape, const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    shape_error("reshape", shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  const bool rg = wants_grad(tape, {&x});
  Tensor out = make_output("reshape", std::move(shape), {x.values().begin(), x.values().end()}, rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage()] {
      if (o->grad.empty()) return;
      auto& g = grad_of(xs);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    });
  }
  return out;
}

Tensor slice(GradTape& tape, const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.dim(axis) || length == 0) {
    shape_error("slice", "axis " + std::to_string(axis) + " [" + std::to_string(start) + ", +" +
                             std::to_string(length) + ") of " + shape_string(x.shape()));
  }
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<double> y(sp.outer * length * sp.inner);
  const auto xv = x.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * sp.length + start) * sp.inner),
                length * sp.inner, y.begin() + static_cast<std::ptrdiff_t>(o * length * sp.inner));
  }
  const bool rg = wants_grad(tape, {&x});
  Tensor out = make_output("slice", std::move(shape), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage(), sp, start, length] {
      if (o->grad.empty()) return;
      auto& g = grad_of(xs);
      const std::size_t block = length * sp.inner;
      for (std::size_t q = 0; q < sp.outer; ++q) {
        double* dst = &g[(q * sp.length + start) * sp.inner];
        const double* src = &o->grad[q * block];
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor concat(GradTape& tape, std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) shape_error("concat", "axis out of range for " + shape_string(ref));
  Shape shape = ref;
  shape[axis] = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rank() != ref.size()) shape_error("concat", "rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (d != axis && p.dim(d) != ref[d]) shape_error("concat", shape_string(p.shape()) + " vs " + shape_string(ref));
    }
    shape[axis] += p.dim(axis);
    rg = rg || p.requires_grad();
  }
  rg = rg && tape.recording();
  const AxisSplit sp = split_axis(shape, axis);
  std::vector<double> y(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.dim(axis) * sp.inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  y.begin() + static_cast<std::ptrdiff_t>((o * sp.length + offset) * sp.inner));
    }
    offset += p.dim(axis);
  }
  Tensor out = make_output("concat", std::move(shape), std::move(y), rg);
  if (rg) {
    std::vector<StoragePtr> inputs;
    for (const Tensor& p : parts) inputs.push_back(p.storage());
    tape.record([o = out.storage(), inputs = std::move(inputs), offsets = std::move(offsets), sp, axis] {
      if (o->grad.empty()) return;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& s = inputs[i];
        if (!s->requires_grad) continue;
        auto& g = grad_of(s);
        const std::size_t block = s->shape[axis] * sp.inner;
        for (std::size_t q = 0; q < sp.outer; ++q) {
          const double* src = &o->grad[(q * sp.length + offsets[i]) * sp.inner];
          double* dst = &g[q * block];
          for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

Tensor softmax(GradTape& tape, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank() || x.dim(axis) == 0) shape_error("softmax", "bad axis for " + shape_string(x.shape()));
  const AxisSplit sp = split_axis(x.shape(), axis);
  std::vector<double> y(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.length * sp.inner + in;
      double mx = xv[base];
      for (std::size_t i = 1; i < sp.length; ++i) mx = std::max(mx, xv[base + i * sp.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < sp.length; ++i) {
        const double e = std::exp(xv[base + i * sp.inner] - mx);
        y[base + i * sp.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < sp.length; ++i) y[base + i * sp.inner] /= total;
    }
  }
  const bool rg = wants_grad(tape, {&x});
  Tensor out = make_output("softmax", x.shape(), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage(), sp] {
      if (o->grad.empty()) return;
      auto& g = grad_of(xs);
      const auto& yv = o->value;
      const auto& dy = o->grad;
      for (std::size_t q = 0; q < sp.outer; ++q) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = q * sp.length * sp.inner + in;
          double dot = 0.0;
          for (std::size_t i = 0; i < sp.length; ++i) dot += dy[base + i * sp.inner] * yv[base + i * sp.inner];
          for (std::size_t i = 0; i < sp.length; ++i) {
            const std::size_t idx = base + i * sp.inner;
            g[idx] += yv[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(GradTape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) shape_error("layer_norm", "scalar input");
  const std::size_t cols = x.shape().back();
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols}) {
    shape_error("layer_norm", "affine parameters must be [" + std::to_string(cols) + "]");
  }
  const std::size_t rows = x.numel() / cols;
  RowStats st = normalize_rows(x.storage()->value, rows, cols, eps);
  std::vector<double> y(x.numel());
  const auto gv = gain.values(), bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = gv[c] * st.xhat[r * cols + c] + bv[c];
  const bool rg = wants_grad(tape, {&x, &gain, &bias});
  Tensor out = make_output("layer_norm", x.shape(), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage(), gs = gain.storage(), bs = bias.storage(),
                 st = std::move(st), rows, cols] {
      if (o->grad.empty()) return;
      const auto& dy = o->grad;
      if (gs->requires_grad || bs->requires_grad) {
        auto& dg = grad_of(gs);
        auto& db = grad_of(bs);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            dg[c] += dy[r * cols + c] * st.xhat[r * cols + c];
            db[c] += dy[r * cols + c];
          }
      }
      if (xs->requires_grad) {
        auto& dx = grad_of(xs);
        std::vector<double> dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) dxhat[c] = dy[r * cols + c] * gs->value[c];
          normalize_rows_backward(dxhat.data(), &st.xhat[r * cols], st.rstd[r], cols, &dx[r * cols]);
        }
      }
    });
  }
  return out;
}

Tensor gelu(GradTape& tape, const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  std::vector<double> y(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = xv[i];
    y[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  const bool rg = wants_grad(tape, {&x});
  Tensor out = make_output("gelu", x.shape(), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage()] {
      if (o->grad.empty()) return;
      auto& g = grad_of(xs);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xs->value[i];
        const double t = std::tanh(kC * (v + kA * v * v * v));
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
        g[i] += o->grad[i] * d;
      }
    });
  }
  return out;
}

Tensor sigmoid(GradTape& tape, const Tensor& x) {
  std::vector<double> y(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid_scalar(xv[i]);
  const bool rg = wants_grad(tape, {&x});
  Tensor out = make_output("sigmoid", x.shape(), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage()] {
      if (o->grad.empty()) return;
      auto& g = grad_of(xs);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = o->value[i];
        g[i] += o->grad[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor swish(GradTape& tape, const Tensor& x) {
  std::vector<double> y(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * sigmoid_scalar(xv[i]);
  const bool rg = wants_grad(tape, {&x});
  Tensor out = make_output("swish", x.shape(), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage()] {
      if (o->grad.empty()) return;
      auto& g = grad_of(xs);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xs->value[i];
        const double s = sigmoid_scalar(v);
        g[i] += o->grad[i] * (s + v * s * (1.0 - s));
      }
    });
  }
  return out;
}

Tensor sum(GradTape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  const bool rg = wants_grad(tape, {&x});
  Tensor out = make_output("sum", {}, {total}, rg);
  if (rg) {
    tape.record([o = out.storage(), xs = x.storage()] {
      if (o->grad.empty()) return;
      auto& g = grad_of(xs);
      for (double& v : g) v += o->grad[0];
    });
  }
  return out;
}

Tensor mean(GradTape& tape, const Tensor& x) {
  if (x.numel() == 0) shape_error("mean", "empty input");
  return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.numel()));
}

Tensor binary_cross_entropy(GradTape& tape, const Tensor& probs, const Tensor& targets) {
  constexpr double kClamp = 1e-7;
  require_same("binary_cross_entropy", probs, targets);
  if (probs.numel() == 0) shape_error("binary_cross_entropy", "empty input");
  const auto pv = probs.values(), tv = targets.values();
  const double n = static_cast<double>(probs.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p = std::clamp(pv[i], kClamp, 1.0 - kClamp);
    total += tv[i] * std::log(p) + (1.0 - tv[i]) * std::log(1.0 - p);
  }
  const bool rg = wants_grad(tape, {&probs});
  Tensor out = make_output("binary_cross_entropy", {}, {-total / n}, rg);
  if (rg) {
    tape.record([o = out.storage(), ps = probs.storage(), ts = targets.storage(), n] {
      if (o->grad.empty()) return;
      auto& g = grad_of(ps);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double p = ps->value[i];
        if (p < kClamp || p > 1.0 - kClamp) continue;  // clamped: flat
        const double t = ts->value[i];
        g[i] += o->grad[0] * -(t / p - (1.0 - t) / (1.0 - p)) / n;
      }
    });
  }
  return out;
}

Tensor conv2d(GradTape& tape, const Tensor& input, const Tensor& kernel, std::size_t stride) {
  require_rank("conv2d", input, 3);
  require_rank("conv2d", kernel, 4);
  const std::size_t c_in = input.dim(0);
  const std::size_t c_out = kernel.dim(0);
  const std::size_t k = kernel.dim(2);
  if (kernel.dim(1) != c_in || kernel.dim(3) != k || stride == 0) {
    shape_error("conv2d", shape_string(input.shape()) + " * " + shape_string(kernel.shape()));
  }
  const ConvGeometry g = conv_geometry(input.dim(1), input.dim(2), k, stride);
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  std::vector<double> y(c_out * out_plane, 0.0);
  const double* X = input.values().data();
  const double* K = kernel.values().data();
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t c = 0; c < c_in; ++c)
      conv_plane(X + c * in_plane, K + (o * c_in + c) * k * k, y.data() + o * out_plane, g);

  const bool rg = wants_grad(tape, {&input, &kernel});
  Tensor out = make_output("conv2d", {c_out, g.out_h, g.out_w}, std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = input.storage(), ks = kernel.storage(), g, c_in, c_out] {
      if (o->grad.empty()) return;
      const std::size_t in_plane = g.in_h * g.in_w;
      const std::size_t out_plane = g.out_h * g.out_w;
      const std::size_t kk = g.k * g.k;
      double* dX = xs->requires_grad ? grad_of(xs).data() : nullptr;
      double* dK = ks->requires_grad ? grad_of(ks).data() : nullptr;
      for (std::size_t oc = 0; oc < c_out; ++oc)
        for (std::size_t c = 0; c < c_in; ++c)
          conv_plane_backward(xs->value.data() + c * in_plane, ks->value.data() + (oc * c_in + c) * kk,
                              o->grad.data() + oc * out_plane, dX ? dX + c * in_plane : nullptr,
                              dK ? dK + (oc * c_in + c) * kk : nullptr, g);
    });
  }
  return out;
}

Tensor depthwise_conv2d(GradTape& tape, const Tensor& input, const Tensor& kernel, std::size_t stride) {
  require_rank("depthwise_conv2d", input, 3);
  require_rank("depthwise_conv2d", kernel, 3);
  const std::size_t ch = input.dim(0);
  const std::size_t k = kernel.dim(1);
  if (kernel.dim(0) != ch || kernel.dim(2) != k || stride == 0) {
    shape_error("depthwise_conv2d", shape_string(input.shape()) + " * " + shape_string(kernel.shape()));
  }
  const ConvGeometry g = conv_geometry(input.dim(1), input.dim(2), k, stride);
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  std::vector<double> y(ch * out_plane, 0.0);
  for (std::size_t c = 0; c < ch; ++c)
    conv_plane(input.values().data() + c * in_plane, kernel.values().data() + c * k * k,
               y.data() + c * out_plane, g);

  const bool rg = wants_grad(tape, {&input, &kernel});
  Tensor out = make_output("depthwise_conv2d", {ch, g.out_h, g.out_w}, std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = input.storage(), ks = kernel.storage(), g, ch] {
      if (o->grad.empty()) return;
      const std::size_t in_plane = g.in_h * g.in_w;
      const std::size_t out_plane = g.out_h * g.out_w;
      const std::size_t kk = g.k * g.k;
      double* dX = xs->requires_grad ? grad_of(xs).data() : nullptr;
      double* dK = ks->requires_grad ? grad_of(ks).data() : nullptr;
      for (std::size_t c = 0; c < ch; ++c)
        conv_plane_backward(xs->value.data() + c * in_plane, ks->value.data() + c * kk,
                            o->grad.data() + c * out_plane, dX ? dX + c * in_plane : nullptr,
                            dK ? dK + c * kk : nullptr, g);
    });
  }
  return out;
}

Tensor channel_norm(GradTape& tape, const Tensor& input, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank("channel_norm", input, 3);
  const std::size_t ch = input.dim(0);
  const std::size_t plane = input.dim(1) * input.dim(2);
  if (gain.shape() != Shape{ch} || bias.shape() != Shape{ch}) {
    shape_error("channel_norm", "affine parameters must be [" + std::to_string(ch) + "]");
  }
  RowStats st = normalize_rows(input.storage()->value, ch, plane, eps);
  std::vector<double> y(input.numel());
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] = gain.at(c) * st.xhat[c * plane + i] + bias.at(c);
  const bool rg = wants_grad(tape, {&input, &gain, &bias});
  Tensor out = make_output("channel_norm", input.shape(), std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = input.storage(), gs = gain.storage(), bs = bias.storage(),
                 st = std::move(st), ch, plane] {
      if (o->grad.empty()) return;
      const auto& dy = o->grad;
      if (gs->requires_grad || bs->requires_grad) {
        auto& dg = grad_of(gs);
        auto& db = grad_of(bs);
        for (std::size_t c = 0; c < ch; ++c) {
          double sg = 0.0, sb = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            sg += dy[c * plane + i] * st.xhat[c * plane + i];
            sb += dy[c * plane + i];
          }
          dg[c] += sg;
          db[c] += sb;
        }
      }
      if (xs->requires_grad) {
        auto& dx = grad_of(xs);
        std::vector<double> dxhat(plane);
        for (std::size_t c = 0; c < ch; ++c) {
          const double gc = gs->value[c];
          for (std::size_t i = 0; i < plane; ++i) dxhat[i] = dy[c * plane + i] * gc;
          normalize_rows_backward(dxhat.data(), &st.xhat[c * plane], st.rstd[c], plane, &dx[c * plane]);
        }
      }
    });
  }
  return out;
}

Tensor global_avg_pool(GradTape& tape, const Tensor& input) {
  require_rank("global_avg_pool", input, 3);
  const std::size_t ch = input.dim(0);
  const std::size_t plane = input.dim(1) * input.dim(2);
  std::vector<double> y(ch, 0.0);
  const auto xv = input.values();
  for (std::size_t c = 0; c < ch; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += xv[c * plane + i];
    y[c] = s / static_cast<double>(plane);
  }
  const bool rg = wants_grad(tape, {&input});
  Tensor out = make_output("global_avg_pool", {ch}, std::move(y), rg);
  if (rg) {
    tape.record([o = out.storage(), xs = input.storage(), ch, plane] {
      if (o->grad.empty()) return;
      auto& g = grad_of(xs);
      for (std::size_t c = 0; c < ch; ++c) {
        const double d = o->grad[c] / static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) g[c * plane + i] += d;
      }
    });
  }
  return out;
}

}  // namespace birdast::tensor
