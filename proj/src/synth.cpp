// Synthetic image domains: unlabeled textures and two labeled 10-class sets.
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "rapforge/data.hpp"

namespace rap::data {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

struct Canvas {
  std::size_t h, w;
  std::vector<double> px;
  Canvas(std::size_t h_, std::size_t w_) : h(h_), w(w_), px(h_ * w_, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return px[r * w + c]; }
};

// 5x7 bitmap digits, one string per row.
constexpr std::array<std::array<const char*, 7>, 10> kDigits = {{
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
}};

double bitmap_sample(int digit, double u, double v) {
  // bilinear over cell centers, zero outside the 5x7 grid
  auto cell = [digit](long r, long c) -> double {
    if (r < 0 || r >= 7 || c < 0 || c >= 5) return 0.0;
    return kDigits[static_cast<std::size_t>(digit)][static_cast<std::size_t>(r)][c] == '1' ? 1.0 : 0.0;
  };
  const double x = u - 0.5, y = v - 0.5;
  const long c0 = static_cast<long>(std::floor(x)), r0 = static_cast<long>(std::floor(y));
  const double fx = x - static_cast<double>(c0), fy = y - static_cast<double>(r0);
  return (1 - fy) * ((1 - fx) * cell(r0, c0) + fx * cell(r0, c0 + 1)) +
         fy * ((1 - fx) * cell(r0 + 1, c0) + fx * cell(r0 + 1, c0 + 1));
}

void finish(Canvas& canvas, Rng& rng, double noise_sd) {
  std::normal_distribution<double> noise(0.0, noise_sd);
  for (auto& p : canvas.px) p = std::clamp(p + noise(rng), 0.0, 1.0);
}

void render_glyph(Canvas& canvas, int digit, Rng& rng) {
  const double s = uniform(rng, 2.5, 3.1);
  const double theta = uniform(rng, -0.25, 0.25);
  const double shear = uniform(rng, -0.2, 0.2);
  const double cy = static_cast<double>(canvas.h) / 2 + uniform(rng, -2.0, 2.0);
  const double cx = static_cast<double>(canvas.w) / 2 + uniform(rng, -2.0, 2.0);
  const double lo = uniform(rng, 0.12, 0.32);  // lower threshold -> thicker strokes
  const double bg = uniform(rng, 0.0, 0.1), fg = uniform(rng, 0.8, 1.0);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (std::size_t r = 0; r < canvas.h; ++r)
    for (std::size_t c = 0; c < canvas.w; ++c) {
      const double dy = static_cast<double>(r) + 0.5 - cy, dx = static_cast<double>(c) + 0.5 - cx;
      const double ry = -st * dx + ct * dy;
      const double rx = ct * dx + st * dy - shear * ry;
      const double u = rx / s + 2.5, v = ry / s + 3.5;
      const double ink = std::clamp((bitmap_sample(digit, u, v) - lo) / 0.3, 0.0, 1.0);
      canvas.at(r, c) = bg + (fg - bg) * ink;
    }
  finish(canvas, rng, 0.02);
}

// Anti-aliased fill from a signed distance (negative inside).
double coverage(double d) { return std::clamp(0.5 - d, 0.0, 1.0); }

double box_sdf(double x, double y, double hx, double hy) {
  const double qx = std::abs(x) - hx, qy = std::abs(y) - hy;
  const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
  return std::hypot(ox, oy) + std::min(std::max(qx, qy), 0.0);
}

void render_shape(Canvas& canvas, int kind, Rng& rng) {
  const double r = uniform(rng, 6.0, 9.5);
  const double theta = uniform(rng, -0.3, 0.3);
  const double cy = static_cast<double>(canvas.h) / 2 + uniform(rng, -2.5, 2.5);
  const double cx = static_cast<double>(canvas.w) / 2 + uniform(rng, -2.5, 2.5);
  const double bg = uniform(rng, 0.0, 0.15), fg = uniform(rng, 0.7, 1.0);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double pi4 = std::numbers::pi / 4;
  for (std::size_t row = 0; row < canvas.h; ++row)
    for (std::size_t col = 0; col < canvas.w; ++col) {
      const double dy = static_cast<double>(row) + 0.5 - cy, dx = static_cast<double>(col) + 0.5 - cx;
      const double x = ct * dx + st * dy, y = -st * dx + ct * dy;
      double d = 0.0;
      switch (kind) {
        case 0:  // disk
          d = std::hypot(x, y) - r;
          break;
        case 1:  // ring
          d = std::abs(std::hypot(x, y) - r * 0.8) - 1.6;
          break;
        case 2:  // square
          d = box_sdf(x, y, r * 0.8, r * 0.8);
          break;
        case 3:  // hollow square
          d = std::abs(box_sdf(x, y, r * 0.75, r * 0.75)) - 1.4;
          break;
        case 4: {  // triangle pointing up
          const double k = std::sqrt(3.0);
          const double e1 = y - r * 0.6;
          const double e2 = (-k * x - y) / 2 - r * 0.6;
          const double e3 = (k * x - y) / 2 - r * 0.6;
          d = std::max({e1, e2, e3});
          break;
        }
        case 5:  // plus
          d = std::min(box_sdf(x, y, r, 1.6), box_sdf(x, y, 1.6, r));
          break;
        case 6: {  // diagonal cross
          const double u = (x + y) * std::cos(pi4), v = (x - y) * std::cos(pi4);
          d = std::min(box_sdf(u, v, r, 1.6), box_sdf(u, v, 1.6, r));
          break;
        }
        case 7:  // three horizontal bars
          d = std::min({box_sdf(x, y - r * 0.65, r, 1.3), box_sdf(x, y, r, 1.3), box_sdf(x, y + r * 0.65, r, 1.3)});
          break;
        case 8: {  // diamond
          const double u = (x + y) * std::cos(pi4), v = (x - y) * std::cos(pi4);
          d = box_sdf(u, v, r * 0.65, r * 0.65);
          break;
        }
        default:  // two dots
          d = std::min(std::hypot(x - r * 0.6, y) - r * 0.35, std::hypot(x + r * 0.6, y) - r * 0.35);
          break;
      }
      canvas.at(row, col) = bg + (fg - bg) * coverage(d);
    }
  finish(canvas, rng, 0.02);
}

void render_stripes(Canvas& canvas, Rng& rng) {
  const double freq = uniform(rng, 1.0 / 8.0, 1.0 / 3.0);
  const double theta = uniform(rng, 0.0, std::numbers::pi);
  const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
  const double amp = uniform(rng, 0.6, 1.0);
  for (std::size_t r = 0; r < canvas.h; ++r)
    for (std::size_t c = 0; c < canvas.w; ++c) {
      const double t = static_cast<double>(c) * std::cos(theta) + static_cast<double>(r) * std::sin(theta);
      canvas.at(r, c) = 0.5 + 0.5 * amp * std::sin(2 * std::numbers::pi * freq * t + phase);
    }
  finish(canvas, rng, 0.01);
}

void render_blobs(Canvas& canvas, Rng& rng) {
  const int count = std::uniform_int_distribution<int>(2, 5)(rng);
  std::fill(canvas.px.begin(), canvas.px.end(), 0.05);
  for (int b = 0; b < count; ++b) {
    const double by = uniform(rng, 0.0, static_cast<double>(canvas.h));
    const double bx = uniform(rng, 0.0, static_cast<double>(canvas.w));
    const double sd = uniform(rng, 2.0, 4.5);
    const double amp = uniform(rng, 0.6, 1.0);
    for (std::size_t r = 0; r < canvas.h; ++r)
      for (std::size_t c = 0; c < canvas.w; ++c) {
        const double d2 = std::pow(static_cast<double>(r) - by, 2) + std::pow(static_cast<double>(c) - bx, 2);
        canvas.at(r, c) += amp * std::exp(-d2 / (2 * sd * sd));
      }
  }
  finish(canvas, rng, 0.01);
}

void render_checker(Canvas& canvas, Rng& rng) {
  const auto cell = static_cast<std::size_t>(std::uniform_int_distribution<int>(3, 7)(rng));
  const auto oy = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 6)(rng));
  const auto ox = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 6)(rng));
  const double a = uniform(rng, 0.0, 1.0), b = uniform(rng, 0.0, 1.0);
  for (std::size_t r = 0; r < canvas.h; ++r)
    for (std::size_t c = 0; c < canvas.w; ++c) canvas.at(r, c) = (((r + oy) / cell + (c + ox) / cell) % 2) ? a : b;
  finish(canvas, rng, 0.01);
}

void render_value_noise(Canvas& canvas, Rng& rng) {
  std::fill(canvas.px.begin(), canvas.px.end(), 0.0);
  double total_amp = 0.0;
  for (int octave = 0; octave < 2; ++octave) {
    const double spacing = octave == 0 ? 7.0 : 3.5;
    const double amp = octave == 0 ? 1.0 : 0.5;
    total_amp += amp;
    const auto gh = static_cast<std::size_t>(std::ceil(static_cast<double>(canvas.h) / spacing)) + 2;
    const auto gw = static_cast<std::size_t>(std::ceil(static_cast<double>(canvas.w) / spacing)) + 2;
    std::vector<double> lattice(gh * gw);
    for (auto& v : lattice) v = uniform(rng, 0.0, 1.0);
    auto fade = [](double t) { return t * t * (3 - 2 * t); };
    for (std::size_t r = 0; r < canvas.h; ++r)
      for (std::size_t c = 0; c < canvas.w; ++c) {
        const double y = static_cast<double>(r) / spacing, x = static_cast<double>(c) / spacing;
        const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
        const double fy = fade(y - static_cast<double>(y0)), fx = fade(x - static_cast<double>(x0));
        const double top = (1 - fx) * lattice[y0 * gw + x0] + fx * lattice[y0 * gw + x0 + 1];
        const double bot = (1 - fx) * lattice[(y0 + 1) * gw + x0] + fx * lattice[(y0 + 1) * gw + x0 + 1];
        canvas.at(r, c) += amp * ((1 - fy) * top + fy * bot);
      }
  }
  for (auto& p : canvas.px) p /= total_amp;
  finish(canvas, rng, 0.01);
}

}  // namespace

std::vector<std::string> synthetic_generators() {
  return {"stripes", "blobs", "checker", "value-noise", "glyphs", "shapes"};
}

std::vector<std::string> texture_generators() { return {"stripes", "blobs", "checker", "value-noise"}; }

bool is_labeled_generator(const std::string& name) { return name == "glyphs" || name == "shapes"; }

DatasetHandle synth_domain(const DomainSpec& spec) {
  const auto names = synthetic_generators();
  if (std::find(names.begin(), names.end(), spec.generator) == names.end()) {
    throw DataError(DataError::Kind::unknown_generator, "unknown synthetic generator '" + spec.generator + "'");
  }
  if (spec.size == 0 || spec.height < 8 || spec.width < 8) {
    throw DataError(DataError::Kind::count_mismatch, "synthetic domain needs size > 0 and images of at least 8x8");
  }
  const bool labeled = is_labeled_generator(spec.generator);
  std::vector<double> px;
  px.reserve(spec.size * spec.height * spec.width);
  std::vector<int> labels;
  for (std::size_t i = 0; i < spec.size; ++i) {
    Rng rng(mix_seed(spec.seed, i));
    Canvas canvas(spec.height, spec.width);
    const int label = static_cast<int>(i % 10);
    if (spec.generator == "glyphs") {
      render_glyph(canvas, label, rng);
    } else if (spec.generator == "shapes") {
      render_shape(canvas, label, rng);
    } else if (spec.generator == "stripes") {
      render_stripes(canvas, rng);
    } else if (spec.generator == "blobs") {
      render_blobs(canvas, rng);
    } else if (spec.generator == "checker") {
      render_checker(canvas, rng);
    } else {
      render_value_noise(canvas, rng);
    }
    px.insert(px.end(), canvas.px.begin(), canvas.px.end());
    if (labeled) labels.push_back(label);
  }
  DatasetHandle handle;
  handle.name = spec.generator;
  handle.images = Tensor::from({spec.size, 1, spec.height, spec.width}, std::move(px));
  if (labeled) {
    handle.labels = std::move(labels);
    handle.num_classes = 10;
  }
  return handle;
}

}  // namespace rap::data
