#include "rapforge/nets.hpp"

#include <cmath>
#include <random>

#include "rapforge/ops.hpp"

namespace rap::nets {

namespace {

// Fan-in scaled uniform init.
Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

double he_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

void check_spatial(ImageShape input, const char* what) {
  if (input.channels == 0 || input.height == 0 || input.width == 0 || input.height % 4 || input.width % 4) {
    throw ArchitectureError(std::string(what) + ": spatial dims must be positive multiples of 4");
  }
}

void check_input(const Tensor& x, ImageShape expect, const std::string& who) {
  if (x.rank() != 4 || x.dim(1) != expect.channels || x.dim(2) != expect.height || x.dim(3) != expect.width) {
    throw ShapeError(who + " expects (n, " + std::to_string(expect.channels) + ", " + std::to_string(expect.height) +
                     ", " + std::to_string(expect.width) + ") input, got " + to_string(x.shape()));
  }
}

}  // namespace

std::vector<std::string> classifier_architectures() { return {"convnet-s", "convnet-m"}; }
std::vector<std::string> generator_architectures() { return {"resgen-s"}; }

Tensor ClassifierNet::register_param(std::string name, Tensor value) {
  value.set_requires_grad(!frozen_);
  params_.push_back({std::move(name), value});
  return value;
}

ClassifierNet ClassifierNet::build(std::string_view arch, std::uint64_t seed, ImageShape input,
                                   std::size_t num_classes) {
  struct ConvSpec {
    std::size_t out, kernel;
    bool pool_after;
  };
  std::vector<ConvSpec> convs;
  if (arch == "convnet-s") {
    convs = {{8, 5, true}, {16, 5, true}};
  } else if (arch == "convnet-m") {
    convs = {{8, 5, false}, {8, 3, true}, {16, 3, false}, {16, 3, true}};
  } else {
    throw ArchitectureError("unknown classifier architecture '" + std::string(arch) + "'");
  }
  check_spatial(input, "classifier");
  if (num_classes < 2) throw ArchitectureError("classifier needs at least 2 classes");

  ClassifierNet net;
  net.arch_ = std::string(arch);
  net.num_classes_ = num_classes;
  net.input_ = input;
  std::mt19937_64 rng(seed);

  std::size_t channels = input.channels;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto& c = convs[i];
    const std::size_t fan_in = channels * c.kernel * c.kernel;
    const std::string prefix = "conv" + std::to_string(i);
    Conv conv{net.register_param(prefix + ".weight", uniform_tensor({c.out, channels, c.kernel, c.kernel},
                                                                    he_bound(fan_in), rng)),
              net.register_param(prefix + ".bias", Tensor::zeros({c.out})), c.kernel / 2};
    net.layers_.emplace_back(conv);
    net.layers_.emplace_back(Relu{});
    if (c.pool_after) net.layers_.emplace_back(MaxPool{2});
    channels = c.out;
  }
  net.layers_.emplace_back(Flatten{});
  const std::size_t flat = channels * (input.height / 4) * (input.width / 4);
  const std::size_t hidden = 64;
  net.layers_.emplace_back(Linear{net.register_param("fc0.weight", uniform_tensor({flat, hidden}, he_bound(flat), rng)),
                                  net.register_param("fc0.bias", Tensor::zeros({hidden}))});
  net.layers_.emplace_back(Relu{});
  net.layers_.emplace_back(
      Linear{net.register_param("fc1.weight", uniform_tensor({hidden, num_classes}, 1.0 / std::sqrt(hidden), rng)),
             net.register_param("fc1.bias", Tensor::zeros({num_classes}))});
  return net;
}

Tensor ClassifierNet::forward(const Tensor& x) const {
  check_input(x, input_, "classifier " + arch_);
  Tensor h = x;
  for (const auto& layer : layers_) {
    h = std::visit(
        [&h](const auto& l) -> Tensor {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Conv>) {
            return conv2d(h, l.weight, l.bias, {1, l.padding});
          } else if constexpr (std::is_same_v<L, Linear>) {
            return add(matmul(h, l.weight), l.bias);
          } else if constexpr (std::is_same_v<L, Relu>) {
            return relu(h);
          } else if constexpr (std::is_same_v<L, MaxPool>) {
            return max_pool2d(h, l.kernel, l.kernel);
          } else {
            return flatten(h);
          }
        },
        layer);
  }
  return h;
}

void ClassifierNet::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& p : params_) {
    p.value.set_requires_grad(!frozen);
    p.value.zero_grad();
  }
}

Tensor GeneratorNet::register_param(std::string name, Tensor value) {
  value.set_requires_grad(true);
  params_.push_back({std::move(name), value});
  return value;
}

GeneratorNet GeneratorNet::build(std::string_view arch, std::uint64_t seed, ImageShape input) {
  if (arch != "resgen-s") throw ArchitectureError("unknown generator architecture '" + std::string(arch) + "'");
  check_spatial(input, "generator");

  GeneratorNet net;
  net.arch_ = std::string(arch);
  net.input_ = input;
  std::mt19937_64 rng(seed);
  const std::size_t k = 3;

  auto conv_norm = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t stride, bool transposed) {
    Shape wshape = transposed ? Shape{in, out, k, k} : Shape{out, in, k, k};
    ConvNorm block;
    block.weight = net.register_param(name + ".weight", uniform_tensor(wshape, he_bound(in * k * k), rng));
    block.gamma = net.register_param(name + ".gamma", Tensor::full({out}, 1.0));
    block.beta = net.register_param(name + ".beta", Tensor::zeros({out}));
    block.stride = stride;
    block.transposed = transposed;
    return block;
  };

  const std::size_t base = 8;
  net.stem_ = conv_norm("stem", input.channels, base, 1, false);
  net.down_.push_back(conv_norm("down0", base, 2 * base, 2, false));
  net.down_.push_back(conv_norm("down1", 2 * base, 4 * base, 2, false));
  for (int i = 0; i < 3; ++i) {
    const std::string name = "res" + std::to_string(i);
    ResBlock block;
    block.first = conv_norm(name + ".a", 4 * base, 4 * base, 1, false);
    block.second = conv_norm(name + ".b", 4 * base, 4 * base, 1, false);
    net.res_.push_back(block);
  }
  net.up_.push_back(conv_norm("up0", 4 * base, 2 * base, 2, true));
  net.up_.push_back(conv_norm("up1", 2 * base, base, 2, true));
  const std::size_t fan_in = base * k * k;
  net.head_weight_ = net.register_param(
      "head.weight", uniform_tensor({input.channels, base, k, k}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
  net.head_bias_ = net.register_param("head.bias", Tensor::zeros({input.channels}));
  return net;
}

Tensor GeneratorNet::apply(const ConvNorm& block, const Tensor& x, bool with_relu) const {
  Tensor h = block.transposed ? conv_transpose2d(x, block.weight, std::nullopt, {block.stride, 1, block.stride - 1})
                              : conv2d(x, block.weight, std::nullopt, {block.stride, 1});
  h = instance_norm(h, block.gamma, block.beta, 1e-5);
  return with_relu ? relu(h) : h;
}

Tensor GeneratorNet::forward(const Tensor& x) const {
  check_input(x, input_, "generator " + arch_);
  Tensor h = apply(stem_, x, true);
  for (const auto& d : down_) h = apply(d, h, true);
  for (const auto& r : res_) h = add(h, apply(r.second, apply(r.first, h, true), false));
  for (const auto& u : up_) h = apply(u, h, true);
  h = conv2d(h, head_weight_, head_bias_, {1, 1});
  // tanh range (-1, 1) mapped affinely onto the pixel range [0, 1]
  return scale(add_scalar(tanh(h), 1.0), 0.5);
}

void GeneratorNet::zero_output_head() {
  std::fill(head_weight_.mutable_data().begin(), head_weight_.mutable_data().end(), 0.0);
  std::fill(head_bias_.mutable_data().begin(), head_bias_.mutable_data().end(), 0.0);
}

}  // namespace rap::nets
