#include "rapforge/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace rap {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Buffer copy_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::string shape_pair(const Tensor& a, const Tensor& b) { return to_string(a.shape()) + " vs " + to_string(b.shape()); }

// Returns the shape of the broadcast result; throws when incompatible.
Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  auto is_suffix = [](const Shape& small, const Shape& big) {
    return small.size() < big.size() && std::equal(small.rbegin(), small.rend(), big.rbegin());
  };
  if (is_suffix(b.shape(), a.shape())) return a.shape();
  if (is_suffix(a.shape(), b.shape())) return b.shape();
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_pair(a, b));
}

// Out-of-place elementwise binary op. Broadcast indices reduce to i % size
// for both supported broadcast forms.
template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  Shape shape = broadcast_shape(a, b, name);
  const std::size_t n = numel(shape);
  const std::size_t na = a.size(), nb = b.size();
  Buffer out(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i % na], bv[i % nb]);
  return make_result(std::move(shape), std::move(out), {a, b}, name, [a, b, n, da, db](std::span<const double> g) {
    const std::size_t na = a.size(), nb = b.size();
    auto av = a.data();
    auto bv = b.data();
    if (a.requires_grad()) {
      Buffer ga(na, 0.0);
      for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i] * da(av[i % na], bv[i % nb]);
      a.accumulate_grad(ga);
    }
    if (b.requires_grad()) {
      Buffer gb(nb, 0.0);
      for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * db(av[i % na], bv[i % nb]);
      b.accumulate_grad(gb);
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
  Buffer out(a.size());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_result(a.shape(), out, {a}, name, [a, out, deriv](std::span<const double> g) {
    Buffer ga(g.size());
    auto av = a.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * deriv(av[i], out[i]);
    a.accumulate_grad(ga);
  });
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

// cols is (c*k*k) x (n*ho*wo), row-major; column = img * ho*wo + oh * wo + ow.
void im2col(const double* x, std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* cols) {
  const std::size_t ncols = n * ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols + ((ch * k + ki) * k + kj) * ncols;
        for (std::size_t img = 0; img < n; ++img) {
          const double* plane = x + (img * c + ch) * h * w;
          double* dst = row + img * ho * wo;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
              const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<long>(h) && iw < static_cast<long>(w);
              dst[oh * wo + ow] = inside ? plane[ih * static_cast<long>(w) + iw] : 0.0;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds cols back into x.
void col2im(const double* cols, std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* x) {
  const std::size_t ncols = n * ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((ch * k + ki) * k + kj) * ncols;
        for (std::size_t img = 0; img < n; ++img) {
          double* plane = x + (img * c + ch) * h * w;
          const double* src = row + img * ho * wo;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(h)) continue;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
              if (iw < 0 || iw >= static_cast<long>(w)) continue;
              plane[ih * static_cast<long>(w) + iw] += src[oh * wo + ow];
            }
          }
        }
      }
    }
  }
}

// (n, c, hw) <-> (c, n*hw) layout shuffles.
Buffer nchw_to_cm(std::span<const double> x, std::size_t n, std::size_t c, std::size_t hw) {
  Buffer out(x.size());
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(x.data() + (img * c + ch) * hw, hw, out.data() + ch * n * hw + img * hw);
  return out;
}

Buffer cm_to_nchw(std::span<const double> x, std::size_t n, std::size_t c, std::size_t hw) {
  Buffer out(x.size());
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(x.data() + ch * n * hw + img * hw, hw, out.data() + (img * c + ch) * hw);
  return out;
}

void check_bias(const std::optional<Tensor>& bias, std::size_t f, const char* op) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != f)) {
    throw ShapeError(std::string(op) + ": bias shape " + to_string(bias->shape()) + " does not match " +
                     std::to_string(f) + " output channels");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "left operand");
  require_rank(b, 2, "matmul", "right operand");
  if (a.dim(1) != b.dim(0)) throw ShapeError("matmul: inner dimensions differ " + shape_pair(a, b));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer out(m * n);
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, "matmul", [a, b, m, k, n](std::span<const double> g) {
    ConstMapMat gm(g.data(), m, n);
    if (a.requires_grad()) {
      Buffer ga(m * k);
      MapMat(ga.data(), m, k).noalias() = gm * ConstMapMat(b.data().data(), k, n).transpose();
      a.accumulate_grad(ga);
    }
    if (b.requires_grad()) {
      Buffer gb(k * n);
      MapMat(gb.data(), k, n).noalias() = ConstMapMat(a.data().data(), m, k).transpose() * gm;
      b.accumulate_grad(gb);
    }
  });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a}, "sum", [a](std::span<const double> g) {
    a.accumulate_grad(Buffer(a.size(), g[0]));
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for " + to_string(a.shape()));
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<long>(axis));
  Buffer out(s.outer * s.inner, 0.0);
  auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += av[(o * s.len + l) * s.inner + i];
  return make_result(std::move(shape), std::move(out), {a}, "sum_axis", [a, s](std::span<const double> g) {
    Buffer ga(a.size());
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.len + l) * s.inner + i] = g[o * s.inner + i];
    a.accumulate_grad(ga);
  });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("mean: axis " + std::to_string(axis) + " out of range for " + to_string(a.shape()));
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax: needs at least one axis");
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  Buffer out(a.size());
  auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = out.data() + r * cols;
    const double m = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += (y[j] = std::exp(x[j] - m));
    for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
  }
  return make_result(a.shape(), out, {a}, "softmax", [a, out, rows, cols](std::span<const double> g) {
    Buffer ga(out.size());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * out[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] = out[r * cols + j] * (g[r * cols + j] - dot);
    }
    a.accumulate_grad(ga);
  });
}

Tensor log_softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("log_softmax: needs at least one axis");
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  Buffer out(a.size());
  auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    const double m = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = x[j] - lse;
  }
  return make_result(a.shape(), out, {a}, "log_softmax", [a, out, rows, cols](std::span<const double> g) {
    Buffer ga(out.size());
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < cols; ++j) gs += g[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] = g[r * cols + j] - std::exp(out[r * cols + j]) * gs;
    }
    a.accumulate_grad(ga);
  });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; }, [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw Error("clamp: lower bound exceeds upper bound");
  return unary(
      a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  return make_result(std::move(shape), copy_of(a), {a}, "reshape", [a](std::span<const double> g) {
    a.accumulate_grad(g);
  });
}

Tensor flatten(const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("flatten: needs a batch axis");
  return reshape(a, {a.dim(0), a.size() / a.dim(0)});
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias, Conv2dOptions opt) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t f = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != k) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()));
  }
  if (opt.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (h + 2 * opt.padding < k || w + 2 * opt.padding < k) {
    throw ShapeError("conv2d: kernel " + to_string(weight.shape()) + " larger than padded input " + to_string(x.shape()));
  }
  check_bias(bias, f, "conv2d");
  const std::size_t ho = (h + 2 * opt.padding - k) / opt.stride + 1;
  const std::size_t wo = (w + 2 * opt.padding - k) / opt.stride + 1;
  const std::size_t ckk = c * k * k, ncols = n * ho * wo;

  Buffer cols(ckk * ncols);
  im2col(x.data().data(), n, c, h, w, k, opt.stride, opt.padding, ho, wo, cols.data());
  Buffer ym(f * ncols);
  MapMat(ym.data(), f, ncols).noalias() = ConstMapMat(weight.data().data(), f, ckk) * ConstMapMat(cols.data(), ckk, ncols);
  if (bias) {
    auto bv = bias->data();
    for (std::size_t ch = 0; ch < f; ++ch)
      for (std::size_t j = 0; j < ncols; ++j) ym[ch * ncols + j] += bv[ch];
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  auto out = cm_to_nchw(ym, n, f, ho * wo);
  return make_result({n, f, ho, wo}, std::move(out), inputs, "conv2d",
                     [x, weight, bias, opt, n, c, h, w, f, k, ho, wo, ckk, ncols](std::span<const double> g) {
                       auto gm = nchw_to_cm(g, n, f, ho * wo);
                       ConstMapMat gmat(gm.data(), f, ncols);
                       if (bias && bias->requires_grad()) {
                         Buffer gb(f);
                         for (std::size_t ch = 0; ch < f; ++ch) gb[ch] = gmat.row(static_cast<long>(ch)).sum();
                         bias->accumulate_grad(gb);
                       }
                       if (weight.requires_grad()) {
                         Buffer cols(ckk * ncols);
                         im2col(x.data().data(), n, c, h, w, k, opt.stride, opt.padding, ho, wo, cols.data());
                         Buffer gw(f * ckk);
                         MapMat(gw.data(), f, ckk).noalias() = gmat * ConstMapMat(cols.data(), ckk, ncols).transpose();
                         weight.accumulate_grad(gw);
                       }
                       if (x.requires_grad()) {
                         Buffer dcols(ckk * ncols);
                         MapMat(dcols.data(), ckk, ncols).noalias() =
                             ConstMapMat(weight.data().data(), f, ckk).transpose() * gmat;
                         Buffer gx(x.size(), 0.0);
                         col2im(dcols.data(), n, c, h, w, k, opt.stride, opt.padding, ho, wo, gx.data());
                         x.accumulate_grad(gx);
                       }
                     });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias,
                        ConvTranspose2dOptions opt) {
  require_rank(x, 4, "conv_transpose2d", "input");
  require_rank(weight, 4, "conv_transpose2d", "weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t f = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != c || weight.dim(3) != k) {
    throw ShapeError("conv_transpose2d: weight " + to_string(weight.shape()) + " incompatible with input " +
                     to_string(x.shape()));
  }
  if (opt.stride == 0 || opt.output_padding >= opt.stride) {
    throw ShapeError("conv_transpose2d: need stride > 0 and output_padding < stride");
  }
  if ((h - 1) * opt.stride + k + opt.output_padding <= 2 * opt.padding) {
    throw ShapeError("conv_transpose2d: padding too large for input " + to_string(x.shape()));
  }
  check_bias(bias, f, "conv_transpose2d");
  const std::size_t ho = (h - 1) * opt.stride + k + opt.output_padding - 2 * opt.padding;
  const std::size_t wo = (w - 1) * opt.stride + k + opt.output_padding - 2 * opt.padding;
  const std::size_t fkk = f * k * k, ncols = n * h * w;

  auto xm = nchw_to_cm(x.data(), n, c, h * w);
  Buffer cols(fkk * ncols);
  MapMat(cols.data(), fkk, ncols).noalias() =
      ConstMapMat(weight.data().data(), c, fkk).transpose() * ConstMapMat(xm.data(), c, ncols);
  Buffer out(n * f * ho * wo, 0.0);
  col2im(cols.data(), n, f, ho, wo, k, opt.stride, opt.padding, h, w, out.data());
  if (bias) {
    auto bv = bias->data();
    for (std::size_t img = 0; img < n; ++img)
      for (std::size_t ch = 0; ch < f; ++ch) {
        double* plane = out.data() + (img * f + ch) * ho * wo;
        for (std::size_t p = 0; p < ho * wo; ++p) plane[p] += bv[ch];
      }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return make_result({n, f, ho, wo}, std::move(out), inputs, "conv_transpose2d",
                     [x, weight, bias, opt, n, c, h, w, f, k, ho, wo, fkk, ncols](std::span<const double> g) {
                       if (bias && bias->requires_grad()) {
                         Buffer gb(f, 0.0);
                         for (std::size_t img = 0; img < n; ++img)
                           for (std::size_t ch = 0; ch < f; ++ch)
                             for (std::size_t p = 0; p < ho * wo; ++p) gb[ch] += g[(img * f + ch) * ho * wo + p];
                         bias->accumulate_grad(gb);
                       }
                       if (!weight.requires_grad() && !x.requires_grad()) return;
                       Buffer dcols(fkk * ncols);
                       im2col(g.data(), n, f, ho, wo, k, opt.stride, opt.padding, h, w, dcols.data());
                       ConstMapMat dc(dcols.data(), fkk, ncols);
                       if (weight.requires_grad()) {
                         auto xm = nchw_to_cm(x.data(), n, c, h * w);
                         Buffer gw(c * fkk);
                         MapMat(gw.data(), c, fkk).noalias() = ConstMapMat(xm.data(), c, ncols) * dc.transpose();
                         weight.accumulate_grad(gw);
                       }
                       if (x.requires_grad()) {
                         Buffer gxm(c * ncols);
                         MapMat(gxm.data(), c, ncols).noalias() = ConstMapMat(weight.data().data(), c, fkk) * dc;
                         x.accumulate_grad(cm_to_nchw(gxm, n, c, h * w));
                       }
                     });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight) {
  require_rank(x, 4, "depthwise_conv2d", "input");
  require_rank(weight, 3, "depthwise_conv2d", "weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t k = weight.dim(1);
  if (weight.dim(0) != c || weight.dim(2) != k) {
    throw ShapeError("depthwise_conv2d: weight " + to_string(weight.shape()) + " incompatible with input " +
                     to_string(x.shape()));
  }
  if (h < k || w < k) {
    throw ShapeError("depthwise_conv2d: image " + to_string(x.shape()) + " smaller than kernel " +
                     to_string(weight.shape()));
  }
  const std::size_t ho = h - k + 1, wo = w - k + 1;
  Buffer out(n * c * ho * wo, 0.0);
  auto xv = x.data();
  auto wv = weight.data();
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = xv.data() + (img * c + ch) * h * w;
      const double* ker = wv.data() + ch * k * k;
      double* dst = out.data() + (img * c + ch) * ho * wo;
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow) {
          double acc = 0.0;
          for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) acc += ker[ki * k + kj] * src[(oh + ki) * w + ow + kj];
          dst[oh * wo + ow] = acc;
        }
    }
  return make_result({n, c, ho, wo}, std::move(out), {x, weight}, "depthwise_conv2d",
                     [x, weight, n, c, h, w, k, ho, wo](std::span<const double> g) {
                       Buffer gx(x.requires_grad() ? x.size() : 0, 0.0);
                       Buffer gw(weight.requires_grad() ? weight.size() : 0, 0.0);
                       auto xv = x.data();
                       auto wv = weight.data();
                       for (std::size_t img = 0; img < n; ++img)
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           const std::size_t xo = (img * c + ch) * h * w;
                           const double* go = g.data() + (img * c + ch) * ho * wo;
                           for (std::size_t oh = 0; oh < ho; ++oh)
                             for (std::size_t ow = 0; ow < wo; ++ow)
                               for (std::size_t ki = 0; ki < k; ++ki)
                                 for (std::size_t kj = 0; kj < k; ++kj) {
                                   const std::size_t xi = xo + (oh + ki) * w + ow + kj;
                                   const double gv = go[oh * wo + ow];
                                   if (!gx.empty()) gx[xi] += gv * wv[ch * k * k + ki * k + kj];
                                   if (!gw.empty()) gw[ch * k * k + ki * k + kj] += gv * xv[xi];
                                 }
                         }
                       if (!gx.empty()) x.accumulate_grad(gx);
                       if (!gw.empty()) weight.accumulate_grad(gw);
                     });
}

Tensor pad2d(const Tensor& x, std::size_t pad, PadMode mode) {
  require_rank(x, 4, "pad2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (mode == PadMode::reflect && (pad >= h || pad >= w)) {
    throw ShapeError("pad2d: reflect padding " + std::to_string(pad) + " needs spatial dims above it, got " +
                     to_string(x.shape()));
  }
  const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
  // source index per padded coordinate, -1 for zero fill
  auto source = [pad, mode](std::size_t i, std::size_t len) -> long {
    long j = static_cast<long>(i) - static_cast<long>(pad);
    const long l = static_cast<long>(len);
    if (j >= 0 && j < l) return j;
    if (mode == PadMode::zero) return -1;
    if (j < 0) return -j;
    return 2 * (l - 1) - j;
  };
  std::vector<long> rows(hp), cols(wp);
  for (std::size_t i = 0; i < hp; ++i) rows[i] = source(i, h);
  for (std::size_t j = 0; j < wp; ++j) cols[j] = source(j, w);
  Buffer out(n * c * hp * wp, 0.0);
  auto xv = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t i = 0; i < hp; ++i)
      for (std::size_t j = 0; j < wp; ++j)
        if (rows[i] >= 0 && cols[j] >= 0)
          out[plane * hp * wp + i * wp + j] = xv[plane * h * w + static_cast<std::size_t>(rows[i]) * w + cols[j]];
  return make_result({n, c, hp, wp}, std::move(out), {x}, "pad2d",
                     [x, rows, cols, n, c, h, w, hp, wp](std::span<const double> g) {
                       Buffer gx(x.size(), 0.0);
                       for (std::size_t plane = 0; plane < n * c; ++plane)
                         for (std::size_t i = 0; i < hp; ++i)
                           for (std::size_t j = 0; j < wp; ++j)
                             if (rows[i] >= 0 && cols[j] >= 0)
                               gx[plane * h * w + static_cast<std::size_t>(rows[i]) * w + cols[j]] +=
                                   g[plane * hp * wp + i * wp + j];
                       x.accumulate_grad(gx);
                     });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 4, "max_pool2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel == 0 || stride == 0 || kernel > h || kernel > w) {
    throw ShapeError("max_pool2d: invalid window " + std::to_string(kernel) + " for " + to_string(x.shape()));
  }
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  Buffer out(n * c * ho * wo);
  std::vector<std::size_t> arg(out.size());
  auto xv = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow) {
        std::size_t best = plane * h * w + oh * stride * w + ow * stride;
        for (std::size_t ki = 0; ki < kernel; ++ki)
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::size_t idx = plane * h * w + (oh * stride + ki) * w + ow * stride + kj;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = plane * ho * wo + oh * wo + ow;
        out[o] = xv[best];
        arg[o] = best;
      }
  return make_result({n, c, ho, wo}, std::move(out), {x}, "max_pool2d", [x, arg](std::span<const double> g) {
    Buffer gx(x.size(), 0.0);
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += g[o];
    x.accumulate_grad(gx);
  });
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 4, "instance_norm", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("instance_norm: affine params " + shape_pair(gamma, beta) + " do not match " + std::to_string(c) +
                     " channels");
  }
  Buffer xhat(x.size()), inv_std(n * c), out(x.size());
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = xv.data() + plane * hw;
    double mu = 0.0;
    for (std::size_t p = 0; p < hw; ++p) mu += src[p];
    mu /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t p = 0; p < hw; ++p) var += (src[p] - mu) * (src[p] - mu);
    var /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[plane] = is;
    const std::size_t ch = plane % c;
    for (std::size_t p = 0; p < hw; ++p) {
      xhat[plane * hw + p] = (src[p] - mu) * is;
      out[plane * hw + p] = gv[ch] * xhat[plane * hw + p] + bv[ch];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, "instance_norm",
                     [x, gamma, beta, xhat, inv_std, n, c, hw](std::span<const double> g) {
                       auto gv = gamma.data();
                       Buffer gg(c, 0.0), gb(c, 0.0), gx(x.requires_grad() ? x.size() : 0);
                       const double m = static_cast<double>(hw);
                       for (std::size_t plane = 0; plane < n * c; ++plane) {
                         const std::size_t ch = plane % c;
                         double sum_g = 0.0, sum_gx = 0.0;
                         for (std::size_t p = 0; p < hw; ++p) {
                           const double gp = g[plane * hw + p];
                           gg[ch] += gp * xhat[plane * hw + p];
                           gb[ch] += gp;
                           sum_g += gp;
                           sum_gx += gp * xhat[plane * hw + p];
                         }
                         if (gx.empty()) continue;
                         const double k = gv[ch] * inv_std[plane];
                         for (std::size_t p = 0; p < hw; ++p) {
                           gx[plane * hw + p] =
                               k * (g[plane * hw + p] - sum_g / m - xhat[plane * hw + p] * sum_gx / m);
                         }
                       }
                       if (!gx.empty()) x.accumulate_grad(gx);
                       if (gamma.requires_grad()) gamma.accumulate_grad(gg);
                       if (beta.requires_grad()) beta.accumulate_grad(gb);
                     });
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Buffer out(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw LabelError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
    out[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return Tensor::from_buffer({labels.size(), classes}, std::move(out));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows", "logits");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<int> out(rows);
  auto v = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * cols;
    // max_element returns the first maximum: lowest index wins ties
    out[r] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

}  // namespace rap
