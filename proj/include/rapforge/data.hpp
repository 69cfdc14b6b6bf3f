#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rapforge/tensor.hpp"

namespace rap::data {

struct Splits {
  std::vector<std::size_t> train, val, test;
};

// An immutable image set in [0, 1] with optional integer labels.
struct DatasetHandle {
  std::string name;
  Tensor images;  // (n, c, h, w)
  std::optional<std::vector<int>> labels;
  std::size_t num_classes = 0;  // 0 when unlabeled
  Splits splits;

  std::size_t size() const { return images.rank() == 4 ? images.dim(0) : 0; }
  bool labeled() const { return labels.has_value(); }

  // Gathers the listed samples into a new (k, c, h, w) tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  // Everything listed, renamed; splits are dropped.
  DatasetHandle subset(std::span<const std::size_t> indices, std::string new_name) const;
};

// IDX ubyte files: 0x00000803 (images, n x rows x cols) and 0x00000801
// (labels). Pixels are scaled by 1/255.
DatasetHandle load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels = {});
void write_idx_images(const std::filesystem::path& path, std::span<const std::uint8_t> pixels, std::size_t count,
                      std::size_t rows, std::size_t cols);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

struct DomainSpec {
  enum class Kind { idx_files, image_dir, synthetic };
  Kind kind = Kind::synthetic;
  std::string generator;  // synthetic only
  std::uint64_t seed = 0;
  std::size_t size = 0;
  std::size_t height = 28, width = 28;
  std::filesystem::path images_path, labels_path;  // idx_files (labels optional)
  std::filesystem::path root;                      // image_dir
};

// Texture domains are unlabeled; "glyphs" (digit-like) and "shapes"
// (geometric figures) are labeled 10-class domains.
std::vector<std::string> synthetic_generators();
std::vector<std::string> texture_generators();
bool is_labeled_generator(const std::string& name);

DatasetHandle synth_domain(const DomainSpec& spec);
DatasetHandle materialize(const DomainSpec& spec);

// <root>/<class>/<image>.png, classes sorted by directory name.
DatasetHandle load_image_dir(const std::filesystem::path& root);

// Seeded shuffle into train/val/test; fractions must sum to 1.
DatasetHandle split(DatasetHandle handle, std::array<double, 3> fractions, std::uint64_t seed);

// Deterministic per-(seed, stream) RNG seed derivation.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace rap::data
