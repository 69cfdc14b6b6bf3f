#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rapforge/data.hpp"
#include "rapforge/losses.hpp"
#include "rapforge/nets.hpp"
#include "rapforge/perturb.hpp"

namespace rap::train {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;
};

// Bias-corrected Adam descent step, in place. Moments are allocated on the
// first call; later calls must see the same parameter shapes.
void adam_step(std::span<const Tensor> params, std::span<const Tensor> grads, AdamState& state,
               const AdamOptions& options);
// Same, reading each parameter's accumulated gradient (zero if none).
void adam_step(const std::vector<nets::Parameter>& params, AdamState& state, const AdamOptions& options);

enum class LabelMode { ground_truth, clean_prediction };

struct EarlyStop {
  std::string metric = "val_fool_rate";  // the only supported metric
  std::size_t patience = 2;
};

struct TrainConfig {
  losses::LossKind loss_kind = losses::LossKind::rce();
  perturb::PerturbationBudget budget;
  std::optional<perturb::SmoothingKernel> smoothing;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  LabelMode label_mode = LabelMode::clean_prediction;
  std::optional<EarlyStop> early_stop;

  // Throws ConfigError on out-of-range fields.
  void validate() const;
  // Stable JSON text; smoothing is stored as {size, sigma}.
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  // True when a run under `other` continues this one exactly (epochs and
  // early stopping may differ).
  bool compatible_with(const TrainConfig& other) const;
};

struct EpochRecord {
  std::size_t epoch = 0;      // 1-based
  double loss_mean = 0.0;     // over the epoch's batches, before each update
  double loss_start = 0.0;    // first batch, before any update this epoch
  double loss_end = 0.0;      // first batch again, after the last update
  std::optional<double> val_fool_rate;  // % on the validation split
};

struct TrainResult {
  nets::GeneratorNet generator;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // epoch whose weights were returned
  AdamState adam;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const EpochRecord&)> on_epoch;
  std::size_t val_limit = 500;  // at most this many validation samples
};

// Algorithm: batch -> generator -> (smooth) -> project -> classifier ->
// loss, then an Adam step on the generator only. Uses data.splits.train
// (or every sample when no split exists) and data.splits.val for the
// monitored fooling rate.
TrainResult train_generator(nets::GeneratorNet gen, const nets::ClassifierNet& clf, const data::DatasetHandle& data,
                            const TrainConfig& cfg, const TrainOptions& options = {});

// Files written per epoch k inside the checkpoint directory.
std::filesystem::path checkpoint_weights(const std::filesystem::path& dir, std::size_t epoch);
std::filesystem::path checkpoint_optimizer(const std::filesystem::path& dir, std::size_t epoch);
std::filesystem::path checkpoint_sidecar(const std::filesystem::path& dir, std::size_t epoch);

struct Checkpoint {
  std::size_t epoch = 0;
  nets::WeightFile generator;
  AdamState adam;
  TrainConfig config;
  std::vector<EpochRecord> history;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir, std::size_t epoch);

// Continues from the checkpoint up to cfg.epochs. Throws ConfigError when
// cfg does not match the checkpoint's configuration.
TrainResult resume(const Checkpoint& checkpoint, const nets::ClassifierNet& clf, const data::DatasetHandle& data,
                   const TrainConfig& cfg, const TrainOptions& options = {});

struct ClassifierTrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
};

struct ClassifierTrainResult {
  std::vector<double> epoch_loss;
  double val_accuracy = 0.0;  // %, on data.splits.val (or the train set when empty)
};

// Supervised CE training; the net is unfrozen for the duration and frozen
// again afterwards.
ClassifierTrainResult train_classifier(nets::ClassifierNet& net, const data::DatasetHandle& data,
                                       const ClassifierTrainConfig& cfg);

}  // namespace rap::train
