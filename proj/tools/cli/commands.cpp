#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rapforge/eval.hpp"
#include "rapforge/image_io.hpp"
#include "rapforge/ops.hpp"

namespace rap::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("file not found: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("cannot parse " + path.string() + ": " + e.what());
  }
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw Error(what + " not found: " + path.string());
}

data::DatasetHandle load_dataset(const ExperimentConfig& cfg, const std::string& id) {
  const DataEntry& entry = cfg.data_entry(id);
  data::DatasetHandle handle = data::materialize(entry.spec);
  handle.name = entry.id;
  return data::split(std::move(handle), entry.split, component_seed(cfg, "split", id, 0));
}

nets::ImageShape image_shape(const data::DatasetHandle& d) {
  return {d.images.dim(1), d.images.dim(2), d.images.dim(3)};
}

struct LoadedClassifier {
  nets::ClassifierNet net;
  std::string data;  // training domain id
};

LoadedClassifier load_trained_classifier(const ExperimentConfig& cfg, const std::string& name) {
  const fs::path weights = classifier_weights(cfg, name);
  require_file(weights, "classifier weights");
  require_file(classifier_meta(cfg, name), "classifier metadata");
  const json meta = read_json(classifier_meta(cfg, name));
  const nets::ImageShape shape{meta.at("channels").get<std::size_t>(), meta.at("height").get<std::size_t>(),
                               meta.at("width").get<std::size_t>()};
  return {nets::load_classifier(weights, shape, meta.at("num_classes").get<std::size_t>()),
          meta.at("data").get<std::string>()};
}

struct LoadedGenerator {
  nets::GeneratorNet net;
  json meta;
  std::optional<perturb::SmoothingKernel> smoothing;
};

std::optional<perturb::SmoothingKernel> smoothing_from(const json& meta) {
  if (!meta.contains("smoothing") || meta.at("smoothing").is_null()) return std::nullopt;
  return perturb::gaussian_kernel(meta["smoothing"].at("size").get<std::size_t>(),
                                  meta["smoothing"].at("sigma").get<double>());
}

LoadedGenerator load_trained_generator(const fs::path& weights) {
  require_file(weights, "generator weights");
  const fs::path meta_path = weights.parent_path() / "meta.json";
  json meta = fs::exists(meta_path) ? read_json(meta_path) : json::object();
  nets::ImageShape shape;
  if (meta.contains("channels")) {
    shape = {meta.at("channels").get<std::size_t>(), meta.at("height").get<std::size_t>(),
             meta.at("width").get<std::size_t>()};
  }
  auto net = nets::load_generator(weights, shape);
  auto smoothing = smoothing_from(meta);
  return {std::move(net), std::move(meta), std::move(smoothing)};
}

train::TrainConfig train_config(const ExperimentConfig& cfg, const GeneratorEntry& g) {
  train::TrainConfig t;
  t.loss_kind = losses::LossKind::parse(g.loss);
  t.budget = perturb::PerturbationBudget::from_255(g.epsilon_255);
  if (g.smoothing) t.smoothing = perturb::gaussian_kernel(3, 1.0);
  t.epochs = g.epochs;
  t.batch_size = g.batch_size;
  t.lr = g.lr;
  t.beta1 = g.beta1;
  t.beta2 = g.beta2;
  t.seed = component_seed(cfg, "generator", g.name, g.seed);
  t.label_mode = g.label_mode;
  if (g.early_stop_patience) t.early_stop = train::EarlyStop{"val_fool_rate", *g.early_stop_patience};
  t.validate();
  return t;
}

// Single-sample CE of logits z against label y.
double sample_ce(std::span<const double> z, int y) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s) - z[static_cast<std::size_t>(y)];
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

fs::path classifier_weights(const ExperimentConfig& cfg, const std::string& name) {
  return cfg.out_dir / "classifiers" / (name + ".rapw");
}
fs::path classifier_meta(const ExperimentConfig& cfg, const std::string& name) {
  return cfg.out_dir / "classifiers" / (name + ".json");
}
fs::path generator_dir(const ExperimentConfig& cfg, const std::string& name) { return cfg.out_dir / "generators" / name; }

void cmd_train_classifier(const ExperimentConfig& cfg, const std::string& name, std::ostream& log) {
  std::vector<const ClassifierEntry*> selected;
  for (const auto& c : cfg.classifiers)
    if (name.empty() || c.name == name) selected.push_back(&c);
  if (selected.empty()) {
    throw ConfigError(name.empty() ? "config lists no classifiers" : "no classifier named '" + name + "'");
  }
  for (const auto* c : selected) {
    const DataEntry& entry = cfg.data_entry(c->data);
    if (entry.spec.kind == data::DomainSpec::Kind::synthetic && !data::is_labeled_generator(entry.spec.generator)) {
      throw ConfigError("classifier '" + c->name + "' needs a labeled dataset; '" + c->data + "' is an unlabeled texture domain");
    }
  }
  for (const auto* c : selected) {
    const auto d = load_dataset(cfg, c->data);
    if (!d.labeled()) throw ConfigError("classifier '" + c->name + "' needs a labeled dataset; '" + c->data + "' has no labels");
    const std::uint64_t seed = component_seed(cfg, "classifier", c->name, c->seed);
    auto net = nets::ClassifierNet::build(c->arch, seed, image_shape(d), d.num_classes);
    train::ClassifierTrainConfig tc;
    tc.epochs = c->epochs;
    tc.batch_size = c->batch_size;
    tc.lr = c->lr;
    tc.seed = seed;
    const auto result = train::train_classifier(net, d, tc);
    nets::save_weights(net, classifier_weights(cfg, c->name));
    json meta{{"name", c->name},     {"arch", c->arch},         {"data", c->data},
              {"seed", seed},        {"epochs", c->epochs},     {"val_accuracy", result.val_accuracy},
              {"epoch_loss", result.epoch_loss},                {"num_classes", d.num_classes},
              {"channels", d.images.dim(1)}, {"height", d.images.dim(2)}, {"width", d.images.dim(3)}};
    write_text(classifier_meta(cfg, c->name), meta.dump(2) + "\n");
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
      log << c->name << " epoch " << e + 1 << " loss " << fixed(result.epoch_loss[e], 6) << '\n';
    }
    log << c->name << " val_accuracy " << fixed(result.val_accuracy, 2) << "% -> " << classifier_weights(cfg, c->name).string()
        << '\n';
  }
}

void cmd_train_generator(const ExperimentConfig& cfg, const GeneratorOverrides& overrides, std::ostream& log) {
  // --name picks a configured generator; otherwise it renames the main one
  const GeneratorEntry* base = nullptr;
  if (overrides.name) {
    for (const auto& e : cfg.generators)
      if (e.name == *overrides.name) base = &e;
    if (cfg.generator && cfg.generator->name == *overrides.name) base = &*cfg.generator;
  }
  if (!base && !cfg.generator) throw ConfigError("config has no generator section");
  GeneratorEntry g = base ? *base : *cfg.generator;
  if (overrides.loss) {
    losses::LossKind::parse(*overrides.loss);
    g.loss = *overrides.loss;
  }
  if (overrides.smoothing) g.smoothing = true;
  if (overrides.name) g.name = *overrides.name;
  const train::TrainConfig tc = train_config(cfg, g);

  auto clf = load_trained_classifier(cfg, g.classifier);
  const auto d = load_dataset(cfg, g.data);
  auto gen = nets::GeneratorNet::build(g.arch, data::mix_seed(tc.seed, 1), image_shape(d));
  const fs::path dir = generator_dir(cfg, g.name);
  fs::create_directories(dir);

  train::TrainOptions options;
  options.checkpoint_dir = dir;
  options.on_epoch = [&](const train::EpochRecord& r) {
    log << g.name << " epoch " << r.epoch << " loss " << fixed(r.loss_mean, 6) << " fool_rate "
        << (r.val_fool_rate ? fixed(*r.val_fool_rate, 2) : std::string("n/a")) << '\n';
  };
  const auto result = train::train_generator(std::move(gen), clf.net, d, tc, options);

  std::ostringstream csv;
  csv << "epoch,loss,loss_start,loss_end,fool_rate\n";
  for (const auto& r : result.history) {
    csv << r.epoch << ',' << fixed(r.loss_mean, 8) << ',' << fixed(r.loss_start, 8) << ',' << fixed(r.loss_end, 8) << ','
        << (r.val_fool_rate ? fixed(*r.val_fool_rate, 4) : std::string()) << '\n';
  }
  write_text(dir / "metrics.csv", csv.str());
  nets::save_weights(result.generator, dir / "final.rapw");
  json meta{{"name", g.name},
            {"arch", g.arch},
            {"classifier", g.classifier},
            {"data", g.data},
            {"loss", g.loss},
            {"epsilon", g.epsilon_255},
            {"best_epoch", result.best_epoch},
            {"epochs_run", result.history.size()},
            {"channels", d.images.dim(1)},
            {"height", d.images.dim(2)},
            {"width", d.images.dim(3)},
            {"train_config", json::parse(tc.to_json())}};
  meta["smoothing"] = tc.smoothing ? json{{"size", tc.smoothing->size}, {"sigma", tc.smoothing->sigma}} : json(nullptr);
  write_text(dir / "meta.json", meta.dump(2) + "\n");
  log << g.name << " best_epoch " << result.best_epoch << " -> " << (dir / "final.rapw").string() << '\n';
}

void cmd_attack(const ExperimentConfig& cfg, const AttackOptions& options, std::ostream& log) {
  if (!(options.epsilon_255 > 0.0 && options.epsilon_255 <= 255.0)) throw ConfigError("--epsilon must lie in (0, 255]");
  if (options.smoothing != "auto" && options.smoothing != "on" && options.smoothing != "off") {
    throw ConfigError("--smoothing must be auto, on or off");
  }
  cfg.data_entry(options.dataset);
  auto gen = load_trained_generator(options.generator);
  std::optional<perturb::SmoothingKernel> smoothing = gen.smoothing;
  if (options.smoothing == "on") smoothing = perturb::gaussian_kernel(3, 1.0);
  if (options.smoothing == "off") smoothing.reset();

  const auto d = load_dataset(cfg, options.dataset);
  if (d.images.dim(1) != 1) throw Error("PNG dump supports single-channel images only");
  std::vector<std::size_t> idx = d.splits.test.empty() ? std::vector<std::size_t>{} : d.splits.test;
  if (idx.empty()) {
    idx.resize(d.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }
  idx.resize(std::min(idx.size(), options.count));
  const Tensor clean = d.gather(idx);
  const auto budget = perturb::PerturbationBudget::from_255(options.epsilon_255);
  const Tensor adv = eval::generate_adversarial(gen.net, clean, budget, smoothing);

  fs::create_directories(options.out);
  const std::size_t h = clean.dim(2), w = clean.dim(3), per = h * w;
  const long allowed = std::lround(options.epsilon_255);
  long worst = 0;
  std::size_t worst_index = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    io::GrayImage c{w, h, std::vector<std::uint8_t>(per)}, a{w, h, std::vector<std::uint8_t>(per)};
    long dev = 0;
    for (std::size_t k = 0; k < per; ++k) {
      c.pixels[k] = io::quantize(clean[i * per + k]);
      a.pixels[k] = io::quantize(adv[i * per + k]);
      dev = std::max(dev, std::labs(static_cast<long>(a.pixels[k]) - static_cast<long>(c.pixels[k])));
    }
    if (dev > worst) {
      worst = dev;
      worst_index = i;
    }
    if (dev > allowed) {
      throw AuditError("budget audit failed at index " + std::to_string(i) + ": deviation " + std::to_string(dev) +
                       " > " + std::to_string(allowed) + " (0-255 units)");
    }
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu", i);
    io::write_png(options.out / ("clean_" + std::string(name) + ".png"), c);
    io::write_png(options.out / ("adv_" + std::string(name) + ".png"), a);
  }
  std::ostringstream audit;
  audit << "audit: images=" << idx.size() << " max_linf_255=" << worst << " (index " << worst_index
        << ") budget=" << allowed << " OK\n";
  write_text(options.out / "audit.txt", audit.str());
  log << audit.str();
}

void cmd_eval(const ExperimentConfig& cfg, std::ostream& log) {
  if (!cfg.eval) throw ConfigError("config has no eval section");
  const EvalEntry& e = *cfg.eval;
  std::vector<std::string> gen_names = e.generators;
  if (gen_names.empty()) {
    if (cfg.generator) gen_names.push_back(cfg.generator->name);
    for (const auto& g : cfg.generators) gen_names.push_back(g.name);
  }

  // load everything up front so a missing artifact fails before compute
  std::vector<eval::AttackSource> sources;
  std::map<std::string, json> gen_meta;
  for (const auto& name : gen_names) {
    auto loaded = load_trained_generator(generator_dir(cfg, name) / "final.rapw");
    const GeneratorEntry& entry = cfg.generator_entry(name);
    eval::AttackSource s;
    s.id = name;
    s.generator = std::move(loaded.net);
    s.smoothing = loaded.smoothing;
    s.trained_against = loaded.meta.value("classifier", entry.classifier);
    s.trained_on = loaded.meta.value("data", entry.data);
    gen_meta[name] = loaded.meta;
    sources.push_back(std::move(s));
  }
  sources.push_back(eval::AttackSource::noise_baseline());
  std::vector<LoadedClassifier> nets_loaded;
  nets_loaded.reserve(e.targets.size());
  for (const auto& t : e.targets) nets_loaded.push_back(load_trained_classifier(cfg, t));
  std::vector<eval::TargetClassifier> targets;
  for (std::size_t i = 0; i < e.targets.size(); ++i) {
    targets.push_back({e.targets[i], &nets_loaded[i].net, nets_loaded[i].data});
  }

  const auto d = load_dataset(cfg, e.data);
  std::vector<std::size_t> idx = d.splits.test;
  if (idx.empty()) throw ConfigError("eval data '" + e.data + "' has an empty test split");
  idx.resize(std::min(idx.size(), e.samples));
  const auto samples = d.subset(idx, e.data);
  const std::uint64_t seed = component_seed(cfg, "eval", "noise", 0);

  std::vector<eval::EvalReport> all;
  std::ostringstream md;
  md << "# Transfer matrix\n\n";
  md << "Dataset `" << e.data << "`, " << samples.size() << " test samples, seed " << seed << ".\n";
  md << "Fooling rates in %. `*` marks a white-box cell.\n";
  for (double eps : e.epsilons_255) {
    const auto budget = perturb::PerturbationBudget::from_255(eps);
    const auto matrix = eval::run_transfer_matrix(sources, targets, samples, budget, seed);
    all.insert(all.end(), matrix.cells.begin(), matrix.cells.end());

    md << "\n## epsilon = " << fixed(eps, 2) << " / 255\n\n| source |";
    for (const auto& t : e.targets) md << ' ' << t << " |";
    md << "\n|---|";
    for (std::size_t t = 0; t < e.targets.size(); ++t) md << "---|";
    md << '\n';
    for (std::size_t s = 0; s < sources.size(); ++s) {
      md << "| " << sources[s].id << " |";
      for (std::size_t t = 0; t < targets.size(); ++t) {
        const auto& cell = matrix.at(s, t);
        if (cell.error) {
          md << " error |";
        } else {
          md << ' ' << fixed(cell.fool_rate, 2) << (cell.threat_model == eval::ThreatModel::white_box ? "*" : "") << " |";
        }
      }
      md << '\n';
    }
    const std::size_t noise_row = sources.size() - 1;
    if (sources.size() > 1) {
      md << "\nGenerator minus Gaussian-noise baseline (points):\n\n| source |";
      for (const auto& t : e.targets) md << ' ' << t << " |";
      md << "\n|---|";
      for (std::size_t t = 0; t < e.targets.size(); ++t) md << "---|";
      md << '\n';
      for (std::size_t s = 0; s < noise_row; ++s) {
        md << "| " << sources[s].id << " |";
        for (std::size_t t = 0; t < targets.size(); ++t) {
          const auto& a = matrix.at(s, t);
          const auto& b = matrix.at(noise_row, t);
          md << ' ' << (a.error || b.error ? std::string("n/a") : fixed(a.fool_rate - b.fool_rate, 2)) << " |";
        }
        md << '\n';
      }
    }
    // CE/RCE pairs: same classifier, data, budget and smoothing
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < noise_row; ++i) {
      for (std::size_t j = 0; j < noise_row; ++j) {
        const json& a = gen_meta[sources[i].id];
        const json& b = gen_meta[sources[j].id];
        if (a.value("loss", "") == "rce" && b.value("loss", "") == "ce" && a.value("classifier", "") == b.value("classifier", "") &&
            a.value("data", "") == b.value("data", "") && a.value("epsilon", 0.0) == b.value("epsilon", 0.0) &&
            a.value("smoothing", json()) == b.value("smoothing", json())) {
          pairs.emplace_back(i, j);
        }
      }
    }
    if (!pairs.empty()) {
      md << "\nRCE minus CE (points):\n\n| pair |";
      for (const auto& t : e.targets) md << ' ' << t << " |";
      md << "\n|---|";
      for (std::size_t t = 0; t < e.targets.size(); ++t) md << "---|";
      md << '\n';
      for (const auto& [i, j] : pairs) {
        md << "| " << sources[i].id << " - " << sources[j].id << " |";
        for (std::size_t t = 0; t < targets.size(); ++t) {
          const auto& a = matrix.at(i, t);
          const auto& b = matrix.at(j, t);
          md << ' ' << (a.error || b.error ? std::string("n/a") : fixed(a.fool_rate - b.fool_rate, 2)) << " |";
        }
        md << '\n';
      }
    }
  }
  std::vector<std::string> failures;
  for (const auto& r : all)
    if (r.error) failures.push_back(r.generator + " x " + r.classifier + ": " + *r.error);
  if (!failures.empty()) {
    md << "\n## Failed cells\n\n";
    for (const auto& f : failures) md << "- " << f << '\n';
  }

  std::ostringstream csv;
  eval::write_csv(csv, all);
  const fs::path dir = cfg.out_dir / "eval";
  write_text(dir / "transfer_matrix.csv", csv.str());
  write_text(dir / "summary.md", md.str());
  log << "wrote " << (dir / "transfer_matrix.csv").string() << " (" << all.size() << " cells, " << failures.size()
      << " failed)\n";
}

void cmd_gradlab(const ExperimentConfig& cfg, const GradlabOptions& options, std::ostream& log) {
  if (options.trials < 1) throw ConfigError("--trials must be >= 1");
  if (options.classes < 2) throw ConfigError("--classes must be >= 2");
  if (!(options.margin >= 0.0)) throw ConfigError("--margin must be non-negative");
  const std::size_t c = options.classes;
  std::ostringstream csv;
  csv << "kind,index,ce_loss,rce_loss,ce_grad_norm,rce_grad_norm,precondition_held,dominant\n";
  auto row = [&](const std::string& kind, std::size_t index, std::span<const double> a, std::span<const double> ap, int y) {
    std::vector<double> rel(c);
    for (std::size_t j = 0; j < c; ++j) rel[j] = ap[j] - a[j];
    const auto dom = losses::dominance_check(a, ap, y, options.margin);
    csv << kind << ',' << index << ',' << fixed(sample_ce(ap, y), 10) << ',' << fixed(sample_ce(rel, y), 10) << ','
        << fixed(dom.ce_norm, 10) << ',' << fixed(dom.rce_norm, 10) << ',' << bool_text(dom.precondition_held) << ','
        << bool_text(dom.dominant) << '\n';
    return dom;
  };

  // Sampled pairs: even trials are forced into the confident-clean /
  // confident-wrong regime, odd trials are left raw.
  std::mt19937_64 rng(component_seed(cfg, "gradlab", "trials", 0));
  std::uniform_real_distribution<double> logit(-5.0, 5.0), extra(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(c) - 1);
  std::size_t held = 0, dominant_when_held = 0;
  for (std::size_t i = 0; i < options.trials; ++i) {
    std::vector<double> a(c), ap(c);
    for (auto& v : a) v = logit(rng);
    for (auto& v : ap) v = logit(rng);
    const int y = label(rng);
    if (i % 2 == 0) {
      double hi = -1e300, lo = 1e300;
      for (std::size_t j = 0; j < c; ++j) {
        if (static_cast<int>(j) == y) continue;
        hi = std::max(hi, a[j]);
        lo = std::min(lo, ap[j]);
      }
      a[static_cast<std::size_t>(y)] = hi + options.margin + extra(rng);
      ap[static_cast<std::size_t>(y)] = lo - options.margin - extra(rng);
    }
    const auto dom = row("trial", i, a, ap, y);
    if (dom.precondition_held) {
      ++held;
      dominant_when_held += dom.dominant;
    }
  }

  // Sign-ascent trajectories on a tiny linear classifier from a confidently
  // classified clean input, one per loss.
  const std::size_t d = 16;
  std::mt19937_64 trng(component_seed(cfg, "gradlab", "trajectory", 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> wv(d * c);
  for (auto& v : wv) v = normal(trng) / std::sqrt(static_cast<double>(d));
  const Tensor W = Tensor::from({d, c}, wv);
  const int y = 0;
  std::vector<double> xv(d);
  for (std::size_t k = 0; k < d; ++k) xv[k] = 0.1 * normal(trng) + 4.0 * wv[k * c + static_cast<std::size_t>(y)];
  const Tensor x = Tensor::from({1, d}, xv);
  Tensor clean_logits;
  {
    NoGradGuard no_grad;
    clean_logits = matmul(x, W);
  }
  const double step = 0.05;
  for (const char* loss_name : {"ce", "rce"}) {
    Tensor xp = x.clone();
    for (std::size_t t = 0; t < options.steps; ++t) {
      Tensor leaf = xp.clone().set_requires_grad(true);
      Tensor logits = matmul(leaf, W);
      row(std::string("trajectory_") + loss_name, t, clean_logits.data(), logits.data(), y);
      const std::vector<int> labels{y};
      Tensor loss = std::string(loss_name) == "ce" ? losses::ce_loss(logits, labels)
                                                   : losses::rce_loss({clean_logits, logits, labels});
      backward(loss);
      std::vector<double> next(d);
      for (std::size_t k = 0; k < d; ++k) {
        const double g = leaf.grad()[k];
        next[k] = xp[k] + step * static_cast<double>((g > 0.0) - (g < 0.0));
      }
      xp = Tensor::from({1, d}, std::move(next));
    }
  }

  const fs::path dir = options.out ? *options.out : cfg.out_dir / "gradlab";
  write_text(dir / "gradlab.csv", csv.str());
  log << "gradlab: " << options.trials << " trials, precondition held in " << held << ", RCE gradient larger in "
      << dominant_when_held << " of those; " << 2 * options.steps << " trajectory rows -> "
      << (dir / "gradlab.csv").string() << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"rapforge: relativistic adversarial perturbation experiments"};
  app.require_subcommand(1);
  std::string config_path;

  auto* tc = app.add_subcommand("train-classifier", "train the configured classifiers");
  std::string tc_name;
  tc->add_option("--config", config_path, "experiment config (JSON)")->required();
  tc->add_option("--name", tc_name, "train only this classifier");

  auto* tg = app.add_subcommand("train-generator", "train the configured generator against a frozen classifier");
  std::string tg_loss, tg_name;
  bool tg_gs = false;
  tg->add_option("--config", config_path, "experiment config (JSON)")->required();
  tg->add_option("--loss", tg_loss, "ce | rce | targeted:K");
  tg->add_flag("--gs", tg_gs, "Gaussian smoothing (size 3, sigma 1) before projection");
  tg->add_option("--name", tg_name, "override the generator name");

  auto* at = app.add_subcommand("attack", "write adversarial PNGs with a budget audit");
  AttackOptions attack;
  at->add_option("--config", config_path, "experiment config (JSON)")->required();
  at->add_option("--generator", attack.generator, "generator weight file")->required();
  at->add_option("--dataset", attack.dataset, "data entry id")->required();
  at->add_option("--epsilon", attack.epsilon_255, "budget in 0-255 units")->required();
  at->add_option("--out", attack.out, "output directory")->required();
  at->add_option("--count", attack.count, "number of test images");
  at->add_option("--smoothing", attack.smoothing, "auto | on | off");

  auto* ev = app.add_subcommand("eval", "transfer matrix and summary");
  ev->add_option("--config,--matrix", config_path, "experiment config (JSON)")->required();

  auto* gl = app.add_subcommand("gradlab", "CE vs RCE gradient statistics");
  GradlabOptions grad;
  std::string gl_out;
  gl->add_option("--config", config_path, "experiment config (JSON)");
  gl->add_option("--trials", grad.trials, "number of sampled logit pairs");
  gl->add_option("--margin", grad.margin, "precondition margin");
  gl->add_option("--classes", grad.classes, "number of classes");
  gl->add_option("--steps", grad.steps, "trajectory length");
  gl->add_option("--out", gl_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    apply_seed_override(cfg);
    if (tc->parsed()) {
      cmd_train_classifier(cfg, tc_name, std::cout);
    } else if (tg->parsed()) {
      GeneratorOverrides o;
      if (!tg_loss.empty()) o.loss = tg_loss;
      o.smoothing = tg_gs;
      if (!tg_name.empty()) o.name = tg_name;
      cmd_train_generator(cfg, o, std::cout);
    } else if (at->parsed()) {
      cmd_attack(cfg, attack, std::cout);
    } else if (ev->parsed()) {
      cmd_eval(cfg, std::cout);
    } else if (gl->parsed()) {
      if (!gl_out.empty()) grad.out = gl_out;
      cmd_gradlab(cfg, grad, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const AuditError& e) {
    std::cerr << "audit failure: " << e.what() << '\n';
    return kAuditFailure;
  } catch (const BudgetError& e) {
    std::cerr << "audit failure: " << e.what() << '\n';
    return kAuditFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace rap::cli
