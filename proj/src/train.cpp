#include "rapforge/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "rapforge/eval.hpp"
#include "rapforge/ops.hpp"

namespace rap::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string label_mode_name(LabelMode mode) {
  return mode == LabelMode::ground_truth ? "ground_truth" : "clean_prediction";
}

LabelMode parse_label_mode(const std::string& name) {
  if (name == "ground_truth") return LabelMode::ground_truth;
  if (name == "clean_prediction") return LabelMode::clean_prediction;
  throw ConfigError("unknown label_mode '" + name + "'");
}

json history_json(const std::vector<EpochRecord>& history) {
  json out = json::array();
  for (const auto& r : history) {
    json row{{"epoch", r.epoch}, {"loss_mean", r.loss_mean}, {"loss_start", r.loss_start}, {"loss_end", r.loss_end}};
    row["val_fool_rate"] = r.val_fool_rate ? json(*r.val_fool_rate) : json(nullptr);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<EpochRecord> history_from(const json& j) {
  std::vector<EpochRecord> out;
  for (const auto& row : j) {
    EpochRecord r;
    r.epoch = row.at("epoch").get<std::size_t>();
    r.loss_mean = row.at("loss_mean").get<double>();
    r.loss_start = row.at("loss_start").get<double>();
    r.loss_end = row.at("loss_end").get<double>();
    if (!row.at("val_fool_rate").is_null()) r.val_fool_rate = row.at("val_fool_rate").get<double>();
    out.push_back(r);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nets::WeightFile adam_to_file(const AdamState& state, const std::vector<nets::Parameter>& params) {
  nets::WeightFile f;
  f.arch = "adam";
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params[i].value.shape();
    f.entries.push_back({"m." + params[i].name, Tensor::from(shape, state.m.empty() ? std::vector<double>(numel(shape))
                                                                                       : state.m[i])});
    f.entries.push_back({"v." + params[i].name, Tensor::from(shape, state.v.empty() ? std::vector<double>(numel(shape))
                                                                                       : state.v[i])});
  }
  return f;
}

AdamState adam_from_file(const nets::WeightFile& f, std::uint64_t t) {
  if (f.arch != "adam" || f.entries.size() % 2 != 0) {
    throw FormatError(FormatError::Kind::shape_mismatch, "optimizer state file is malformed");
  }
  AdamState s;
  s.t = t;
  if (t == 0) return s;
  for (std::size_t i = 0; i < f.entries.size(); i += 2) {
    auto m = f.entries[i].value.data();
    auto v = f.entries[i + 1].value.data();
    s.m.emplace_back(m.begin(), m.end());
    s.v.emplace_back(v.begin(), v.end());
  }
  return s;
}

// Everything the loop needs to carry across epochs.
struct LoopState {
  nets::GeneratorNet gen;
  AdamState adam;
  std::vector<EpochRecord> history;
  std::size_t first_epoch = 1;
};

// Handles share storage, so clearing a copy clears the parameter.
std::vector<Tensor> param_values(const std::vector<nets::Parameter>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

std::vector<std::size_t> training_indices(const data::DatasetHandle& data) {
  if (!data.splits.train.empty()) return data.splits.train;
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

void check_shapes(const nets::GeneratorNet& gen, const nets::ClassifierNet& clf, const data::DatasetHandle& data) {
  if (data.images.rank() != 4) throw ShapeError("training images must be (n, c, h, w)");
  const auto gi = gen.input_shape();
  const auto ci = clf.input_shape();
  const Shape want_gen{gi.channels, gi.height, gi.width};
  const Shape want_clf{ci.channels, ci.height, ci.width};
  const Shape have{data.images.dim(1), data.images.dim(2), data.images.dim(3)};
  if (have != want_gen) {
    throw ShapeError("dataset images " + to_string(have) + " do not match the generator input " + to_string(want_gen));
  }
  if (have != want_clf) {
    throw ShapeError("dataset images " + to_string(have) + " do not match the classifier input " + to_string(want_clf));
  }
}

struct BatchLoss {
  Tensor objective;  // what the optimizer descends
  double loss = 0.0;  // the attack loss itself
  bool empty = false;
};

// Forward pass for one batch. Reference labels come from the clean
// classifier output or the dataset.
BatchLoss batch_loss(const nets::GeneratorNet& gen, const nets::ClassifierNet& clf, const data::DatasetHandle& data,
                     std::span<const std::size_t> batch, const TrainConfig& cfg) {
  Tensor clean_logits;
  {
    NoGradGuard no_grad;
    clean_logits = clf.forward(data.gather(batch));
  }
  std::vector<int> labels = cfg.label_mode == LabelMode::ground_truth ? data.gather_labels(batch)
                                                                      : argmax_rows(clean_logits);
  std::vector<std::size_t> keep(batch.begin(), batch.end());
  if (cfg.loss_kind.tag() == losses::LossKind::Tag::targeted) {
    // samples already labeled with the target carry no targeted signal
    std::vector<std::size_t> kept;
    std::vector<int> kept_labels;
    std::vector<double> kept_logits;
    const std::size_t c = clean_logits.dim(1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (labels[i] == cfg.loss_kind.target()) continue;
      kept.push_back(batch[i]);
      kept_labels.push_back(labels[i]);
      auto row = clean_logits.data().subspan(i * c, c);
      kept_logits.insert(kept_logits.end(), row.begin(), row.end());
    }
    if (kept.empty()) return {Tensor(), 0.0, true};
    clean_logits = Tensor::from({kept.size(), c}, std::move(kept_logits));
    keep = std::move(kept);
    labels = std::move(kept_labels);
  }
  const Tensor x = data.gather(keep);
  Tensor g = gen.forward(x);
  if (cfg.smoothing) g = perturb::smooth(g, *cfg.smoothing);
  const Tensor adv = perturb::project(x, g, cfg.budget);
  losses::LogitPair pair{clean_logits, clf.forward(adv), std::move(labels)};
  Tensor loss = losses::attack_loss(cfg.loss_kind, pair);
  const double value = loss.item();
  return {cfg.loss_kind.maximize() ? neg(loss) : loss, value, false};
}

std::optional<double> validation_fool_rate(const nets::GeneratorNet& gen, const nets::ClassifierNet& clf,
                                           const Tensor& val_images, const TrainConfig& cfg) {
  if (val_images.rank() != 4 || val_images.dim(0) == 0) return std::nullopt;
  const Tensor adv = eval::generate_adversarial(gen, val_images, cfg.budget, cfg.smoothing);
  return eval::fooling_rate(eval::predict(clf, val_images), eval::predict(clf, adv));
}

void write_checkpoint(const fs::path& dir, std::size_t epoch, const LoopState& state, const TrainConfig& cfg) {
  fs::create_directories(dir);
  nets::save_weights(state.gen, checkpoint_weights(dir, epoch));
  nets::save_weights(adam_to_file(state.adam, state.gen.parameters()), checkpoint_optimizer(dir, epoch));
  json side{{"epoch", epoch},
            {"adam_t", state.adam.t},
            {"config", json::parse(cfg.to_json())},
            {"history", history_json(state.history)}};
  write_text(checkpoint_sidecar(dir, epoch), side.dump(2) + "\n");
}

TrainResult run_loop(LoopState state, const nets::ClassifierNet& clf, const data::DatasetHandle& data,
                     const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (!clf.frozen()) throw ConfigError("the classifier must be frozen while a generator trains");
  check_shapes(state.gen, clf, data);
  if (cfg.label_mode == LabelMode::ground_truth && !data.labeled()) {
    throw ConfigError("label_mode ground_truth needs a labeled dataset; '" + data.name + "' has no labels");
  }
  if (cfg.loss_kind.tag() == losses::LossKind::Tag::targeted &&
      (cfg.loss_kind.target() < 0 || static_cast<std::size_t>(cfg.loss_kind.target()) >= clf.num_classes())) {
    throw LabelError("target class " + std::to_string(cfg.loss_kind.target()) + " outside the classifier's " +
                     std::to_string(clf.num_classes()) + " classes");
  }

  std::vector<std::size_t> val = data.splits.val;
  if (val.size() > options.val_limit) val.resize(options.val_limit);
  const Tensor val_images = val.empty() ? Tensor() : data.gather(val);
  if (cfg.early_stop && val.empty()) throw ConfigError("early stopping needs a validation split");

  const std::vector<std::size_t> train_idx = training_indices(data);
  if (train_idx.empty()) throw DataError(DataError::Kind::count_mismatch, "no training samples");
  const AdamOptions adam{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};

  std::optional<nets::WeightFile> best;
  std::size_t best_epoch = 0;
  double best_metric = -1.0;
  std::size_t since_best = 0;
  for (const auto& r : state.history) {
    if (r.val_fool_rate && *r.val_fool_rate > best_metric) {
      best_metric = *r.val_fool_rate;
      best_epoch = r.epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
  }
  if (cfg.early_stop && best_epoch > 0 && options.checkpoint_dir) {
    const auto path = checkpoint_weights(*options.checkpoint_dir, best_epoch);
    if (fs::exists(path)) best = nets::load_weight_file(path);
  }

  for (std::size_t epoch = state.first_epoch; epoch <= cfg.epochs; ++epoch) {
    if (cfg.early_stop && best_epoch > 0 && since_best >= cfg.early_stop->patience) break;
    std::vector<std::size_t> order = train_idx;
    std::mt19937_64 rng(data::mix_seed(cfg.seed, 0xE90C'0000ULL + epoch));
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord record;
    record.epoch = epoch;
    double total = 0.0;
    std::size_t counted = 0;
    std::optional<std::vector<std::size_t>> first_batch;
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      BatchLoss bl;
      try {
        bl = batch_loss(state.gen, clf, data, batch, cfg);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("non-finite value at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                             ": " + e.what());
      }
      if (bl.empty) continue;
      if (!std::isfinite(bl.loss)) {
        throw NonFiniteError("NaN loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      if (!first_batch) {
        first_batch.emplace(batch.begin(), batch.end());
        record.loss_start = bl.loss;
      }
      total += bl.loss;
      ++counted;
      backward(bl.objective);
      adam_step(state.gen.parameters(), state.adam, adam);
      for (Tensor p : param_values(state.gen.parameters())) p.zero_grad();
    }
    if (counted == 0) throw LabelError("every training sample already carries the target label");
    record.loss_mean = total / static_cast<double>(counted);
    {
      NoGradGuard no_grad;
      record.loss_end = batch_loss(state.gen, clf, data, *first_batch, cfg).loss;
    }
    record.val_fool_rate = validation_fool_rate(state.gen, clf, val_images, cfg);
    state.history.push_back(record);

    if (record.val_fool_rate && *record.val_fool_rate > best_metric) {
      best_metric = *record.val_fool_rate;
      best_epoch = epoch;
      since_best = 0;
      if (cfg.early_stop) best = nets::to_weight_file(state.gen);
    } else {
      ++since_best;
    }
    if (options.checkpoint_dir) write_checkpoint(*options.checkpoint_dir, epoch, state, cfg);
    if (options.on_epoch) options.on_epoch(record);
  }

  TrainResult result{std::move(state.gen), std::move(state.history), 0, std::move(state.adam)};
  result.best_epoch = result.history.empty() ? 0 : result.history.back().epoch;
  if (cfg.early_stop && best) {
    nets::assign_parameters(result.generator.parameters(), *best);
    result.best_epoch = best_epoch;
  }
  return result;
}

}  // namespace

void adam_step(std::span<const Tensor> params, std::span<const Tensor> grads, AdamState& state,
               const AdamOptions& options) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state tracks a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.m[i].size() != params[i].size()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " has shape " + to_string(params[i].shape()) +
                       " but gradient " + to_string(grads[i].shape()));
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto w = p.mutable_data();
    auto g = grads[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = options.beta1 * m[k] + (1.0 - options.beta1) * g[k];
      v[k] = options.beta2 * v[k] + (1.0 - options.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

void adam_step(const std::vector<nets::Parameter>& params, AdamState& state, const AdamOptions& options) {
  std::vector<Tensor> values, grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (const auto& p : params) {
    values.push_back(p.value);
    grads.push_back(p.value.has_grad() ? p.value.grad_tensor() : Tensor::zeros(p.value.shape()));
  }
  adam_step(values, grads, state, options);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  budget.validate();
  if (early_stop) {
    if (early_stop->metric != "val_fool_rate") throw ConfigError("unknown early-stop metric '" + early_stop->metric + "'");
    if (early_stop->patience < 1) throw ConfigError("early-stop patience must be >= 1");
  }
}

std::string TrainConfig::to_json() const {
  json j{{"loss_kind", loss_kind.to_string()},
         {"epsilon", budget.epsilon},
         {"pixel_min", budget.pixel_min},
         {"pixel_max", budget.pixel_max},
         {"epochs", epochs},
         {"batch_size", batch_size},
         {"lr", lr},
         {"beta1", beta1},
         {"beta2", beta2},
         {"seed", seed},
         {"label_mode", label_mode_name(label_mode)}};
  j["smoothing"] = smoothing ? json{{"size", smoothing->size}, {"sigma", smoothing->sigma}} : json(nullptr);
  j["early_stop"] = early_stop ? json{{"metric", early_stop->metric}, {"patience", early_stop->patience}} : json(nullptr);
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    TrainConfig c;
    c.loss_kind = losses::LossKind::parse(j.at("loss_kind").get<std::string>());
    c.budget.epsilon = j.at("epsilon").get<double>();
    c.budget.pixel_min = j.at("pixel_min").get<double>();
    c.budget.pixel_max = j.at("pixel_max").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.label_mode = parse_label_mode(j.at("label_mode").get<std::string>());
    if (!j.at("smoothing").is_null()) {
      c.smoothing = perturb::gaussian_kernel(j["smoothing"].at("size").get<std::size_t>(),
                                             j["smoothing"].at("sigma").get<double>());
    }
    if (!j.at("early_stop").is_null()) {
      c.early_stop = EarlyStop{j["early_stop"].at("metric").get<std::string>(),
                               j["early_stop"].at("patience").get<std::size_t>()};
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
}

bool TrainConfig::compatible_with(const TrainConfig& o) const {
  const bool same_smoothing = smoothing.has_value() == o.smoothing.has_value() &&
                              (!smoothing || (smoothing->size == o.smoothing->size && smoothing->sigma == o.smoothing->sigma));
  return loss_kind == o.loss_kind && budget.epsilon == o.budget.epsilon && budget.pixel_min == o.budget.pixel_min &&
         budget.pixel_max == o.budget.pixel_max && same_smoothing && batch_size == o.batch_size && lr == o.lr &&
         beta1 == o.beta1 && beta2 == o.beta2 && seed == o.seed && label_mode == o.label_mode;
}

fs::path checkpoint_weights(const fs::path& dir, std::size_t epoch) {
  return dir / ("epoch_" + std::to_string(epoch) + ".rapw");
}
fs::path checkpoint_optimizer(const fs::path& dir, std::size_t epoch) {
  return dir / ("epoch_" + std::to_string(epoch) + ".adam.rapw");
}
fs::path checkpoint_sidecar(const fs::path& dir, std::size_t epoch) {
  return dir / ("epoch_" + std::to_string(epoch) + ".json");
}

TrainResult train_generator(nets::GeneratorNet gen, const nets::ClassifierNet& clf, const data::DatasetHandle& data,
                            const TrainConfig& cfg, const TrainOptions& options) {
  // parameters are handles; train on a private copy
  LoopState state{nets::generator_from(nets::to_weight_file(gen), gen.input_shape()), {}, {}, 1};
  return run_loop(std::move(state), clf, data, cfg, options);
}

Checkpoint load_checkpoint(const fs::path& dir, std::size_t epoch) {
  Checkpoint c;
  json side;
  try {
    side = json::parse(read_text(checkpoint_sidecar(dir, epoch)));
    c.epoch = side.at("epoch").get<std::size_t>();
    c.config = TrainConfig::from_json(side.at("config").dump());
    c.history = history_from(side.at("history"));
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::truncated, "checkpoint sidecar unreadable: " + std::string(e.what()));
  }
  c.generator = nets::load_weight_file(checkpoint_weights(dir, epoch));
  c.adam = adam_from_file(nets::load_weight_file(checkpoint_optimizer(dir, epoch)), side.at("adam_t").get<std::uint64_t>());
  return c;
}

TrainResult resume(const Checkpoint& checkpoint, const nets::ClassifierNet& clf, const data::DatasetHandle& data,
                   const TrainConfig& cfg, const TrainOptions& options) {
  if (!checkpoint.config.compatible_with(cfg)) {
    throw ConfigError("checkpoint config " + checkpoint.config.to_json() + " does not match " + cfg.to_json());
  }
  const auto shape = clf.input_shape();
  LoopState state{nets::generator_from(checkpoint.generator, shape), checkpoint.adam, checkpoint.history,
                  checkpoint.epoch + 1};
  return run_loop(std::move(state), clf, data, cfg, options);
}

ClassifierTrainResult train_classifier(nets::ClassifierNet& net, const data::DatasetHandle& data,
                                       const ClassifierTrainConfig& cfg) {
  if (!data.labeled()) {
    throw DataError(DataError::Kind::missing_labels, "classifier training needs labels; '" + data.name + "' has none");
  }
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) throw ConfigError("bad classifier training config");
  const std::vector<std::size_t> train_idx = training_indices(data);
  struct Refreeze {
    nets::ClassifierNet& n;
    ~Refreeze() { n.set_frozen(true); }
  } refreeze{net};
  net.set_frozen(false);

  ClassifierTrainResult result;
  AdamState state;
  const AdamOptions adam{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    std::mt19937_64 rng(data::mix_seed(cfg.seed, 0xC1A5'0000ULL + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const Tensor logits = net.forward(data.gather(batch));
      const auto labels = data.gather_labels(batch);
      Tensor loss = losses::ce_loss(logits, labels);
      total += loss.item();
      ++batches;
      backward(loss);
      adam_step(net.parameters(), state, adam);
      for (Tensor p : param_values(net.parameters())) p.zero_grad();
    }
    result.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  net.set_frozen(true);
  const auto& eval_idx = data.splits.val.empty() ? train_idx : data.splits.val;
  const auto pred = eval::predict(net, data.gather(eval_idx));
  const auto labels = data.gather_labels(eval_idx);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  result.val_accuracy = 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
  return result;
}

}  // namespace rap::train
