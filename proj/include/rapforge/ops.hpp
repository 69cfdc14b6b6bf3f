#pragma once

#include <optional>

#include "rapforge/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes, rejects
// non-finite inputs and records itself on the tape when an input requires a
// gradient and grad mode is on.
//
// Binary elementwise ops broadcast only in two ways: a single-element
// operand against any tensor, and a trailing-axis operand whose shape is a
// suffix of the other's (bias addition).
namespace rap {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

// (m, k) x (k, n) -> (m, n)
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);

// Along the last axis.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

// Ties send the gradient to the first operand.
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
// Gradient passes where lo <= a <= hi.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor reshape(const Tensor& a, Shape shape);
// (n, ...) -> (n, rest)
Tensor flatten(const Tensor& a);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// x: (n, c, h, w), weight: (f, c, k, k), bias: (f) -> (n, f, ho, wo). Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias, Conv2dOptions opt = {});

struct ConvTranspose2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;
};

// x: (n, c, h, w), weight: (c, f, k, k), bias: (f) -> (n, f, ho, wo) with
// ho = (h - 1) * stride - 2 * padding + k + output_padding.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias,
                        ConvTranspose2dOptions opt = {});

// Per-channel "valid" convolution: x: (n, c, h, w), weight: (c, k, k).
Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight);

enum class PadMode { zero, reflect };
Tensor pad2d(const Tensor& x, std::size_t pad, PadMode mode);

// Non-overlapping windows when stride == kernel. Ties pick the first maximum.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

// Per-sample, per-channel normalization with affine gamma/beta of shape (c).
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Constant helpers (never recorded).
Tensor one_hot(std::span<const int> labels, std::size_t classes);
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace rap
