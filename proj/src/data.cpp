#include "rapforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "rapforge/image_io.hpp"

namespace rap::data {

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(DataError::Kind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Tensor DatasetHandle::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = images.size() / size();
  Shape shape = images.shape();
  shape[0] = indices.size();
  std::vector<double> out(indices.size() * per);
  auto src = images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ShapeError("sample index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(src.begin() + static_cast<long>(indices[i] * per), per, out.begin() + static_cast<long>(i * per));
  }
  return Tensor::from(std::move(shape), std::move(out));
}

std::vector<int> DatasetHandle::gather_labels(std::span<const std::size_t> indices) const {
  if (!labels) throw DataError(DataError::Kind::missing_labels, "dataset '" + name + "' has no labels");
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = (*labels)[indices[i]];
  return out;
}

DatasetHandle DatasetHandle::subset(std::span<const std::size_t> indices, std::string new_name) const {
  DatasetHandle out;
  out.name = std::move(new_name);
  out.images = gather(indices);
  if (labels) out.labels = gather_labels(indices);
  out.num_classes = num_classes;
  return out;
}

DatasetHandle load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels) {
  const auto img = read_all(images);
  if (img.size() < 16) throw DataError(DataError::Kind::truncated, images.string() + ": header truncated");
  if (be32(img, 0) != kImageMagic) throw DataError(DataError::Kind::bad_magic, images.string() + ": bad IDX image magic");
  const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  if (n == 0 || rows == 0 || cols == 0) throw DataError(DataError::Kind::truncated, images.string() + ": empty image set");
  if (img.size() - 16 < n * rows * cols) {
    throw DataError(DataError::Kind::truncated, images.string() + ": expected " + std::to_string(n * rows * cols) +
                                                    " pixel bytes, found " + std::to_string(img.size() - 16));
  }
  std::vector<double> px(n * rows * cols);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = img[16 + i] / 255.0;

  DatasetHandle handle;
  handle.name = images.stem().string();
  handle.images = Tensor::from({n, 1, rows, cols}, std::move(px));
  if (labels) {
    const auto lab = read_all(*labels);
    if (lab.size() < 8) throw DataError(DataError::Kind::truncated, labels->string() + ": header truncated");
    if (be32(lab, 0) != kLabelMagic) throw DataError(DataError::Kind::bad_magic, labels->string() + ": bad IDX label magic");
    const std::size_t count = be32(lab, 4);
    if (count != n) {
      throw DataError(DataError::Kind::count_mismatch,
                      std::to_string(n) + " images but " + std::to_string(count) + " labels");
    }
    if (lab.size() - 8 < count) throw DataError(DataError::Kind::truncated, labels->string() + ": label bytes truncated");
    std::vector<int> y(lab.begin() + 8, lab.begin() + 8 + static_cast<long>(count));
    handle.num_classes = static_cast<std::size_t>(*std::max_element(y.begin(), y.end())) + 1;
    handle.labels = std::move(y);
  }
  return handle;
}

void write_idx_images(const std::filesystem::path& path, std::span<const std::uint8_t> pixels, std::size_t count,
                      std::size_t rows, std::size_t cols) {
  if (pixels.size() != count * rows * cols) throw DataError(DataError::Kind::count_mismatch, "pixel buffer size mismatch");
  std::vector<std::uint8_t> bytes;
  put_be32(bytes, kImageMagic);
  put_be32(bytes, static_cast<std::uint32_t>(count));
  put_be32(bytes, static_cast<std::uint32_t>(rows));
  put_be32(bytes, static_cast<std::uint32_t>(cols));
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  write_bytes(path, bytes);
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> bytes;
  put_be32(bytes, kLabelMagic);
  put_be32(bytes, static_cast<std::uint32_t>(labels.size()));
  bytes.insert(bytes.end(), labels.begin(), labels.end());
  write_bytes(path, bytes);
}

DatasetHandle load_image_dir(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError(DataError::Kind::io, "image directory not found: " + root.string());
  std::vector<fs::path> classes;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) classes.push_back(entry.path());
  std::sort(classes.begin(), classes.end());
  std::vector<double> px;
  std::vector<int> labels;
  std::size_t h = 0, w = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(classes[c]))
      if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto img = io::read_png(f);
      if (h == 0) {
        h = img.height;
        w = img.width;
      } else if (img.height != h || img.width != w) {
        throw DataError(DataError::Kind::count_mismatch, f.string() + ": image size differs from the rest");
      }
      for (auto p : img.pixels) px.push_back(p / 255.0);
      labels.push_back(static_cast<int>(c));
    }
  }
  if (labels.empty()) throw DataError(DataError::Kind::io, "no PNG images under " + root.string());
  DatasetHandle handle;
  handle.name = root.filename().string();
  handle.images = Tensor::from({labels.size(), 1, h, w}, std::move(px));
  handle.labels = std::move(labels);
  handle.num_classes = classes.size();
  return handle;
}

DatasetHandle materialize(const DomainSpec& spec) {
  switch (spec.kind) {
    case DomainSpec::Kind::synthetic:
      return synth_domain(spec);
    case DomainSpec::Kind::idx_files: {
      std::optional<std::filesystem::path> labels;
      if (!spec.labels_path.empty()) labels = spec.labels_path;
      return load_idx(spec.images_path, labels);
    }
    case DomainSpec::Kind::image_dir:
      return load_image_dir(spec.root);
  }
  throw DataError(DataError::Kind::io, "unknown domain kind");
}

DatasetHandle split(DatasetHandle handle, std::array<double, 3> fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || std::any_of(fractions.begin(), fractions.end(), [](double f) { return f < 0.0; })) {
    throw DataError(DataError::Kind::bad_fractions, "split fractions must be non-negative and sum to 1");
  }
  const std::size_t n = handle.size();
  const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(fractions[2] * static_cast<double>(n)));
  if (n_val + n_test > n) throw DataError(DataError::Kind::bad_fractions, "split leaves no room for training data");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0x5011'7ULL));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = n - n_val - n_test;
  handle.splits.train.assign(order.begin(), order.begin() + static_cast<long>(n_train));
  handle.splits.val.assign(order.begin() + static_cast<long>(n_train), order.begin() + static_cast<long>(n_train + n_val));
  handle.splits.test.assign(order.begin() + static_cast<long>(n_train + n_val), order.end());
  return handle;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace rap::data
