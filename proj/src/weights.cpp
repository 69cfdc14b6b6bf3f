#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rapforge/nets.hpp"

namespace rap::nets {

namespace {

constexpr char kMagic[8] = {'R', 'A', 'P', 'W', 'T', 'S', '0', '1'};
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
 public:
  template <typename T>
  void put(T value) {
    auto u = static_cast<std::uint64_t>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_string() {
    auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(FormatError::Kind::truncated, "weight payload is truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> payload) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large payloads
  std::size_t off = 0;
  while (off < payload.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(payload.size() - off, 1u << 30));
    crc = crc32(crc, payload.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

WeightFile snapshot(const std::string& arch, const std::vector<Parameter>& params) {
  WeightFile file{arch, {}};
  for (const auto& p : params) file.entries.push_back({p.name, p.value.detach()});
  return file;
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const WeightFile& file) {
  Writer payload;
  payload.put_string(file.arch);
  payload.put(static_cast<std::uint32_t>(file.entries.size()));
  for (const auto& e : file.entries) {
    payload.put_string(e.name);
    payload.put(kDtypeF64);
    payload.put(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) payload.put(static_cast<std::uint64_t>(d));
    for (double v : e.value.data()) payload.put_f64(v);
  }
  Writer out;
  out.bytes.assign(std::begin(kMagic), std::end(kMagic));
  out.put(static_cast<std::uint64_t>(payload.bytes.size()));
  out.bytes.insert(out.bytes.end(), payload.bytes.begin(), payload.bytes.end());
  out.put(crc_of(payload.bytes));
  return out.bytes;
}

WeightFile decode_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError(FormatError::Kind::magic_mismatch, "not a weight file (magic mismatch)");
  }
  Reader header(bytes.subspan(sizeof(kMagic)));
  const auto length = header.get<std::uint64_t>();
  const std::size_t start = sizeof(kMagic) + 8;
  if (bytes.size() < start || bytes.size() - start != length + 4) {
    throw FormatError(FormatError::Kind::truncated, "weight file length does not match its header");
  }
  auto payload = bytes.subspan(start, length);
  Reader trailer(bytes.subspan(start + length));
  if (trailer.get<std::uint32_t>() != crc_of(payload)) {
    throw FormatError(FormatError::Kind::checksum_mismatch, "weight file checksum mismatch");
  }

  Reader r(payload);
  WeightFile file;
  file.arch = r.get_string();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    if (r.get<std::uint8_t>() != kDtypeF64) {
      throw FormatError(FormatError::Kind::magic_mismatch, "entry '" + name + "' has an unsupported dtype");
    }
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = r.get_f64();
    file.entries.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  if (!r.done()) throw FormatError(FormatError::Kind::truncated, "trailing bytes in weight payload");
  return file;
}

void save_weights(const WeightFile& file, const std::filesystem::path& path) {
  auto bytes = encode_weights(file);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::io, "cannot write weight file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::io, "short write on " + path.string());
}

WeightFile load_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "weight file not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

WeightFile to_weight_file(const ClassifierNet& net) { return snapshot(net.arch(), net.parameters()); }
WeightFile to_weight_file(const GeneratorNet& net) { return snapshot(net.arch(), net.parameters()); }

void save_weights(const ClassifierNet& net, const std::filesystem::path& path) { save_weights(to_weight_file(net), path); }
void save_weights(const GeneratorNet& net, const std::filesystem::path& path) { save_weights(to_weight_file(net), path); }

void assign_parameters(const std::vector<Parameter>& params, const WeightFile& file) {
  if (params.size() != file.entries.size()) {
    throw FormatError(FormatError::Kind::shape_mismatch, "weight file has " + std::to_string(file.entries.size()) +
                                                             " entries, network expects " +
                                                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& want = params[i];
    const auto& have = file.entries[i];
    if (want.name != have.name || want.value.shape() != have.value.shape()) {
      throw FormatError(FormatError::Kind::shape_mismatch, "entry '" + have.name + "' " +
                                                               to_string(have.value.shape()) + " does not fit '" +
                                                               want.name + "' " + to_string(want.value.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor target = params[i].value;
    auto src = file.entries[i].value.data();
    std::copy(src.begin(), src.end(), target.mutable_data().begin());
  }
}

ClassifierNet classifier_from(const WeightFile& file, ImageShape input, std::size_t num_classes) {
  auto known = classifier_architectures();
  if (std::find(known.begin(), known.end(), file.arch) == known.end()) {
    throw FormatError(FormatError::Kind::shape_mismatch,
                      "weight file holds '" + file.arch + "' parameters, not a classifier");
  }
  auto net = ClassifierNet::build(file.arch, 0, input, num_classes);
  assign_parameters(net.parameters(), file);
  return net;
}

GeneratorNet generator_from(const WeightFile& file, ImageShape input) {
  auto known = generator_architectures();
  if (std::find(known.begin(), known.end(), file.arch) == known.end()) {
    throw FormatError(FormatError::Kind::shape_mismatch,
                      "weight file holds '" + file.arch + "' parameters, not a generator");
  }
  auto net = GeneratorNet::build(file.arch, 0, input);
  assign_parameters(net.parameters(), file);
  return net;
}

ClassifierNet load_classifier(const std::filesystem::path& path, ImageShape input, std::size_t num_classes) {
  return classifier_from(load_weight_file(path), input, num_classes);
}

GeneratorNet load_generator(const std::filesystem::path& path, ImageShape input) {
  return generator_from(load_weight_file(path), input);
}

}  // namespace rap::nets
