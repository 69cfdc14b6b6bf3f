#include "config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rapforge/error.hpp"
#include "rapforge/losses.hpp"
#include "rapforge/nets.hpp"

namespace rap::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError("config " + where + ": " + what);
}

// Field reader that tracks which keys were consumed, so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(where_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    if (!has(key)) fail(where_, "missing required key '" + key + "'");
    return j_.at(key);
  }

  std::string str(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) fail(path(key), "expected a string");
    return v.get<std::string>();
  }
  std::string str(const std::string& key, std::string fallback) { return has(key) ? str(key) : fallback; }

  double num(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) fail(path(key), "expected a number");
    return v.get<double>();
  }
  double num(const std::string& key, double fallback) { return has(key) ? num(key) : fallback; }

  std::uint64_t uint(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      fail(path(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  std::uint64_t uint(const std::string& key, std::uint64_t fallback) { return has(key) ? uint(key) : fallback; }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(path(key), "expected true or false");
    return v.get<bool>();
  }

  std::vector<std::string> strings(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) fail(path(key), "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(path(key), "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(where_, "unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

DataEntry parse_data(const json& j, const std::string& where, const fs::path& base) {
  Section s(j, where);
  DataEntry d;
  d.id = s.str("id");
  const std::string kind = s.str("kind");
  if (kind == "synthetic") {
    d.spec.kind = data::DomainSpec::Kind::synthetic;
    d.spec.generator = s.str("generator");
    const auto known = data::synthetic_generators();
    if (std::find(known.begin(), known.end(), d.spec.generator) == known.end()) {
      fail(s.path("generator"), "unknown synthetic generator '" + d.spec.generator + "'");
    }
    d.spec.size = s.uint("size");
    if (d.spec.size == 0) fail(s.path("size"), "must be positive");
    d.spec.seed = s.uint("seed", 0);
    d.spec.height = s.uint("height", 28);
    d.spec.width = s.uint("width", 28);
  } else if (kind == "idx") {
    d.spec.kind = data::DomainSpec::Kind::idx_files;
    d.spec.images_path = resolve(base, s.str("images"));
    if (s.has("labels")) d.spec.labels_path = resolve(base, s.str("labels"));
  } else if (kind == "image_dir") {
    d.spec.kind = data::DomainSpec::Kind::image_dir;
    d.spec.root = resolve(base, s.str("root"));
  } else {
    fail(s.path("kind"), "expected synthetic, idx or image_dir, got '" + kind + "'");
  }
  if (s.has("split")) {
    const json& sp = s.raw("split");
    if (!sp.is_array() || sp.size() != 3 || !std::all_of(sp.begin(), sp.end(), [](const json& v) { return v.is_number(); })) {
      fail(s.path("split"), "expected [train, val, test] fractions");
    }
    d.split = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
    const double total = d.split[0] + d.split[1] + d.split[2];
    if (std::abs(total - 1.0) > 1e-9 || std::any_of(d.split.begin(), d.split.end(), [](double f) { return f < 0.0; })) {
      fail(s.path("split"), "fractions must be non-negative and sum to 1");
    }
  }
  s.finish();
  return d;
}

ClassifierEntry parse_classifier(const json& j, const std::string& where) {
  Section s(j, where);
  ClassifierEntry c;
  c.name = s.str("name");
  c.arch = s.str("arch", c.arch);
  const auto archs = nets::classifier_architectures();
  if (std::find(archs.begin(), archs.end(), c.arch) == archs.end()) fail(s.path("arch"), "unknown architecture '" + c.arch + "'");
  c.data = s.str("data");
  c.epochs = s.uint("epochs", c.epochs);
  c.batch_size = s.uint("batch_size", c.batch_size);
  c.lr = s.num("lr", c.lr);
  c.seed = s.uint("seed", c.seed);
  if (c.epochs < 1 || c.batch_size < 1 || !(c.lr > 0.0)) fail(where, "epochs, batch_size and lr must be positive");
  s.finish();
  return c;
}

GeneratorEntry parse_generator(const json& j, const std::string& where) {
  Section s(j, where);
  GeneratorEntry g;
  g.name = s.str("name", g.name);
  g.arch = s.str("arch", g.arch);
  const auto archs = nets::generator_architectures();
  if (std::find(archs.begin(), archs.end(), g.arch) == archs.end()) fail(s.path("arch"), "unknown architecture '" + g.arch + "'");
  g.classifier = s.str("classifier");
  g.data = s.str("data");
  g.loss = s.str("loss", g.loss);
  losses::LossKind::parse(g.loss);  // validates
  g.epsilon_255 = s.num("epsilon", g.epsilon_255);
  if (!(g.epsilon_255 > 0.0 && g.epsilon_255 <= 255.0)) fail(s.path("epsilon"), "must lie in (0, 255]");
  g.smoothing = s.boolean("smoothing", g.smoothing);
  g.epochs = s.uint("epochs", g.epochs);
  g.batch_size = s.uint("batch_size", g.batch_size);
  g.lr = s.num("lr", g.lr);
  g.beta1 = s.num("beta1", g.beta1);
  g.beta2 = s.num("beta2", g.beta2);
  const std::string mode = s.str("label_mode", "clean_prediction");
  if (mode == "clean_prediction") {
    g.label_mode = train::LabelMode::clean_prediction;
  } else if (mode == "ground_truth") {
    g.label_mode = train::LabelMode::ground_truth;
  } else {
    fail(s.path("label_mode"), "expected ground_truth or clean_prediction");
  }
  if (s.has("early_stop")) {
    Section es(s.raw("early_stop"), s.path("early_stop"));
    if (es.str("metric", "val_fool_rate") != "val_fool_rate") fail(es.path("metric"), "only val_fool_rate is supported");
    g.early_stop_patience = es.uint("patience", 2);
    es.finish();
  }
  g.seed = s.uint("seed", g.seed);
  if (g.epochs < 1 || g.batch_size < 1 || !(g.lr > 0.0)) fail(where, "epochs, batch_size and lr must be positive");
  if (!(g.beta1 >= 0.0 && g.beta1 < 1.0 && g.beta2 >= 0.0 && g.beta2 < 1.0)) fail(where, "betas must lie in [0, 1)");
  s.finish();
  return g;
}

EvalEntry parse_eval(const json& j, const std::string& where) {
  Section s(j, where);
  EvalEntry e;
  if (s.has("generators")) e.generators = s.strings("generators");
  e.targets = s.strings("targets");
  if (e.targets.empty()) fail(s.path("targets"), "needs at least one classifier");
  e.data = s.str("data");
  if (s.has("epsilon")) {
    const json& v = s.raw("epsilon");
    e.epsilons_255.clear();
    if (v.is_number()) {
      e.epsilons_255.push_back(v.get<double>());
    } else if (v.is_array() && !v.empty() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); })) {
      for (const auto& x : v) e.epsilons_255.push_back(x.get<double>());
    } else {
      fail(s.path("epsilon"), "expected a number or a non-empty array of numbers");
    }
    for (double eps : e.epsilons_255) {
      if (!(eps > 0.0 && eps <= 255.0)) fail(s.path("epsilon"), "values must lie in (0, 255]");
    }
  }
  e.samples = s.uint("samples", e.samples);
  if (e.samples == 0) fail(s.path("samples"), "must be positive");
  s.finish();
  return e;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

const DataEntry& ExperimentConfig::data_entry(const std::string& id) const {
  for (const auto& d : data)
    if (d.id == id) return d;
  throw ConfigError("no data entry with id '" + id + "'");
}

const ClassifierEntry& ExperimentConfig::classifier(const std::string& name) const {
  for (const auto& c : classifiers)
    if (c.name == name) return c;
  throw ConfigError("no classifier named '" + name + "'");
}

const GeneratorEntry& ExperimentConfig::generator_entry(const std::string& name) const {
  if (generator && generator->name == name) return *generator;
  for (const auto& g : generators)
    if (g.name == name) return g;
  throw ConfigError("no generator named '" + name + "'");
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section s(root, "root");
  ExperimentConfig c;
  c.seed = s.uint("seed", 0);
  c.out_dir = resolve(base_dir, s.str("out_dir", "rapforge-out"));
  if (s.has("data")) {
    const json& arr = s.raw("data");
    if (!arr.is_array()) fail("data", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) c.data.push_back(parse_data(arr[i], "data[" + std::to_string(i) + "]", base_dir));
  }
  if (s.has("classifiers")) {
    const json& arr = s.raw("classifiers");
    if (!arr.is_array()) fail("classifiers", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      c.classifiers.push_back(parse_classifier(arr[i], "classifiers[" + std::to_string(i) + "]"));
    }
  }
  if (s.has("generator")) c.generator = parse_generator(s.raw("generator"), "generator");
  if (s.has("generators")) {
    const json& arr = s.raw("generators");
    if (!arr.is_array()) fail("generators", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      c.generators.push_back(parse_generator(arr[i], "generators[" + std::to_string(i) + "]"));
    }
  }
  if (s.has("eval")) c.eval = parse_eval(s.raw("eval"), "eval");
  s.finish();

  // cross references
  std::set<std::string> ids;
  for (const auto& d : c.data) {
    if (!ids.insert(d.id).second) fail("data", "duplicate id '" + d.id + "'");
  }
  std::set<std::string> names;
  for (const auto& k : c.classifiers) {
    if (!names.insert(k.name).second) fail("classifiers", "duplicate name '" + k.name + "'");
    c.data_entry(k.data);
  }
  std::set<std::string> gens;
  auto check_gen = [&](const GeneratorEntry& g) {
    if (!gens.insert(g.name).second) fail("generators", "duplicate name '" + g.name + "'");
    c.classifier(g.classifier);
    c.data_entry(g.data);
  };
  if (c.generator) check_gen(*c.generator);
  for (const auto& g : c.generators) check_gen(g);
  if (c.eval) {
    c.data_entry(c.eval->data);
    for (const auto& t : c.eval->targets) c.classifier(t);
    for (const auto& g : c.eval->generators) c.generator_entry(g);
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config file not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

void apply_seed_override(ExperimentConfig& config) {
  const char* env = std::getenv("RAPFORGE_SEED");
  if (!env) return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0') throw ConfigError(std::string("RAPFORGE_SEED is not an integer: ") + env);
  config.seed = v;
}

std::uint64_t component_seed(const ExperimentConfig& config, const std::string& kind, const std::string& name,
                             std::uint64_t stream) {
  return data::mix_seed(data::mix_seed(config.seed, fnv1a(kind + "/" + name)), stream);
}

}  // namespace rap::cli
