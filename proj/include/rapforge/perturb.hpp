#pragma once

#include <cstdint>

#include "rapforge/tensor.hpp"

namespace rap::perturb {

// l-infinity budget in normalized pixel units.
struct PerturbationBudget {
  double epsilon = 10.0 / 255.0;
  double pixel_min = 0.0;
  double pixel_max = 1.0;

  // Throws ConfigError unless 0 < epsilon <= pixel_max - pixel_min.
  void validate() const;
  // Budget from 0-255 units.
  static PerturbationBudget from_255(double epsilon_255);
};

struct SmoothingKernel {
  std::size_t size = 3;
  double sigma = 1.0;
  Tensor weights;  // (size, size), sums to 1
};

// x' = clip(min(x + eps, max(g, x - eps))). Differentiable in g: the
// gradient passes where g lies inside the active band, zero elsewhere.
Tensor project(const Tensor& x, const Tensor& generated, const PerturbationBudget& budget);

// Normalized 2-D Gaussian with odd size.
SmoothingKernel gaussian_kernel(std::size_t size, double sigma);

// Depthwise Gaussian blur with reflect padding; output shape == input shape.
Tensor smooth(const Tensor& images, const SmoothingKernel& kernel);

// x + n, n ~ N(0, eps/2) i.i.d., clamped to the budget and the pixel range.
Tensor gaussian_noise_baseline(const Tensor& x, const PerturbationBudget& budget, std::uint64_t seed);

// max |a - b| over all elements.
double linf_distance(const Tensor& a, const Tensor& b);

}  // namespace rap::perturb
