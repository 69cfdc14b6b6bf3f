#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rapforge/error.hpp"
#include "rapforge/tensor.hpp"

namespace rap::nets {

class ArchitectureError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct Parameter {
  std::string name;
  Tensor value;
};

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
};

std::vector<std::string> classifier_architectures();
std::vector<std::string> generator_architectures();

// Fixed-parameter convolutional classifier producing logits. Plays the
// discriminator whose parameters stay fixed while a generator trains.
class ClassifierNet {
 public:
  struct Conv {
    Tensor weight, bias;
    std::size_t padding;
  };
  struct Linear {
    Tensor weight, bias;  // weight is (in, out)
  };
  struct Relu {};
  struct MaxPool {
    std::size_t kernel;
  };
  struct Flatten {};
  using Layer = std::variant<Conv, Linear, Relu, MaxPool, Flatten>;

  // Known architectures: "convnet-s" (2 conv + 2 linear), "convnet-m"
  // (4 conv with mixed kernel sizes + 2 linear). Spatial dims must be
  // divisible by 4.
  static ClassifierNet build(std::string_view arch, std::uint64_t seed, ImageShape input = {},
                             std::size_t num_classes = 10);

  // (n, c, h, w) -> (n, num_classes)
  Tensor forward(const Tensor& x) const;

  const std::string& arch() const { return arch_; }
  std::size_t num_classes() const { return num_classes_; }
  ImageShape input_shape() const { return input_; }

  const std::vector<Parameter>& parameters() const { return params_; }

  // Frozen parameters never require gradients, so the tape never produces
  // a gradient for them.
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }

 private:
  ClassifierNet() = default;
  Tensor register_param(std::string name, Tensor value);

  std::string arch_;
  std::size_t num_classes_ = 0;
  ImageShape input_;
  bool frozen_ = true;
  std::vector<Layer> layers_;
  std::vector<Parameter> params_;
};

// Residual encoder-decoder producing unbounded adversarial images in [0, 1].
class GeneratorNet {
 public:
  struct ConvNorm {
    Tensor weight, gamma, beta;
    std::size_t stride;
    bool transposed;
  };
  struct ResBlock {
    ConvNorm first, second;
  };

  // "resgen-s": input block, 2 strided down blocks, 3 residual blocks,
  // 2 transposed-conv up blocks, conv + tanh head mapped to [0, 1].
  static GeneratorNet build(std::string_view arch, std::uint64_t seed, ImageShape input = {});

  Tensor forward(const Tensor& x) const;

  const std::string& arch() const { return arch_; }
  ImageShape input_shape() const { return input_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  // Zeroes the output head so the generator emits 0.5 everywhere.
  void zero_output_head();

 private:
  GeneratorNet() = default;
  Tensor register_param(std::string name, Tensor value);
  Tensor apply(const ConvNorm& block, const Tensor& x, bool with_relu) const;

  std::string arch_;
  ImageShape input_;
  ConvNorm stem_;
  std::vector<ConvNorm> down_;
  std::vector<ResBlock> res_;
  std::vector<ConvNorm> up_;
  Tensor head_weight_, head_bias_;
  std::vector<Parameter> params_;
};

// Named, architecture-tagged parameter collection as stored on disk.
struct WeightFile {
  std::string arch;
  std::vector<Parameter> entries;
};

// On-disk layout (little-endian):
//   "RAPWTS01" | u64 payload length | payload | u32 CRC-32 of payload
// payload:
//   u32 arch length, arch bytes, u32 entry count, then per entry
//   u32 name length, name bytes, u8 dtype (1 = float64), u32 rank,
//   u64 dims[rank], raw values.
std::vector<std::uint8_t> encode_weights(const WeightFile& file);
WeightFile decode_weights(std::span<const std::uint8_t> bytes);

void save_weights(const WeightFile& file, const std::filesystem::path& path);
WeightFile load_weight_file(const std::filesystem::path& path);

WeightFile to_weight_file(const ClassifierNet& net);
WeightFile to_weight_file(const GeneratorNet& net);
void save_weights(const ClassifierNet& net, const std::filesystem::path& path);
void save_weights(const GeneratorNet& net, const std::filesystem::path& path);

// Copies values into existing parameters; names and shapes must match.
void assign_parameters(const std::vector<Parameter>& params, const WeightFile& file);

ClassifierNet load_classifier(const std::filesystem::path& path, ImageShape input = {}, std::size_t num_classes = 10);
GeneratorNet load_generator(const std::filesystem::path& path, ImageShape input = {});
ClassifierNet classifier_from(const WeightFile& file, ImageShape input = {}, std::size_t num_classes = 10);
GeneratorNet generator_from(const WeightFile& file, ImageShape input = {});

}  // namespace rap::nets
