#include "rapforge/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rapforge/ops.hpp"

namespace rap::perturb {

void PerturbationBudget::validate() const {
  if (!(pixel_max > pixel_min)) throw ConfigError("pixel range must be non-empty");
  if (!(epsilon > 0.0) || epsilon > pixel_max - pixel_min) {
    throw ConfigError("epsilon must lie in (0, pixel_max - pixel_min], got " + std::to_string(epsilon));
  }
}

PerturbationBudget PerturbationBudget::from_255(double epsilon_255) {
  PerturbationBudget b;
  b.epsilon = epsilon_255 / 255.0;
  b.validate();
  return b;
}

Tensor project(const Tensor& x, const Tensor& generated, const PerturbationBudget& budget) {
  budget.validate();
  if (x.shape() != generated.shape()) {
    throw ShapeError("project: clean " + to_string(x.shape()) + " vs generated " + to_string(generated.shape()));
  }
  // Band edges nudged inward so that |edge - x| <= eps holds in floating point.
  std::vector<double> lo(x.size()), hi(x.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double l = xv[i] - budget.epsilon;
    while (xv[i] - l > budget.epsilon) l = std::nextafter(l, xv[i]);
    double h = xv[i] + budget.epsilon;
    while (h - xv[i] > budget.epsilon) h = std::nextafter(h, xv[i]);
    lo[i] = l;
    hi[i] = h;
  }
  const Tensor lower = Tensor::from(x.shape(), std::move(lo));
  const Tensor upper = Tensor::from(x.shape(), std::move(hi));
  const Tensor banded = minimum(upper, maximum(generated, lower));
  return clamp(banded, budget.pixel_min, budget.pixel_max);
}

SmoothingKernel gaussian_kernel(std::size_t size, double sigma) {
  if (size == 0 || size % 2 == 0) throw ConfigError("gaussian kernel size must be odd and positive");
  if (!(sigma > 0.0)) throw ConfigError("gaussian sigma must be positive");
  const auto half = static_cast<long>(size / 2);
  std::vector<double> w(size * size);
  double total = 0.0;
  for (long i = -half; i <= half; ++i)
    for (long j = -half; j <= half; ++j) {
      const double v = std::exp(-static_cast<double>(i * i + j * j) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>((i + half) * static_cast<long>(size) + j + half)] = v;
      total += v;
    }
  for (auto& v : w) v /= total;
  return {size, sigma, Tensor::from({size, size}, std::move(w))};
}

Tensor smooth(const Tensor& images, const SmoothingKernel& kernel) {
  if (images.rank() != 4) throw ShapeError("smooth: expects (n, c, h, w), got " + to_string(images.shape()));
  const std::size_t c = images.dim(1);
  if (images.dim(2) < kernel.size || images.dim(3) < kernel.size) {
    throw ShapeError("smooth: image " + to_string(images.shape()) + " smaller than " + std::to_string(kernel.size) +
                     "x" + std::to_string(kernel.size) + " kernel");
  }
  if (kernel.size == 1) return scale(images, kernel.weights[0]);
  std::vector<double> per_channel;
  per_channel.reserve(c * kernel.weights.size());
  for (std::size_t ch = 0; ch < c; ++ch) per_channel.insert(per_channel.end(), kernel.weights.data().begin(), kernel.weights.data().end());
  const Tensor w = Tensor::from({c, kernel.size, kernel.size}, std::move(per_channel));
  return depthwise_conv2d(pad2d(images, kernel.size / 2, PadMode::reflect), w);
}

Tensor gaussian_noise_baseline(const Tensor& x, const PerturbationBudget& budget, std::uint64_t seed) {
  budget.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, budget.epsilon / 2.0);
  std::vector<double> noisy(x.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] = xv[i] + noise(rng);
  NoGradGuard no_grad;
  return project(x.detach(), Tensor::from(x.shape(), std::move(noisy)), budget);
}

double linf_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("linf_distance: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace rap::perturb
