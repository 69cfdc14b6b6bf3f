#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rapforge/data.hpp"
#include "rapforge/train.hpp"

namespace rap::cli {

struct DataEntry {
  std::string id;
  data::DomainSpec spec;
  std::array<double, 3> split{0.8, 0.1, 0.1};
};

struct ClassifierEntry {
  std::string name;
  std::string arch = "convnet-s";
  std::string data;  // DataEntry id
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;  // stream id under the master seed
};

struct GeneratorEntry {
  std::string name = "generator";
  std::string arch = "resgen-s";
  std::string classifier;  // ClassifierEntry name
  std::string data;        // DataEntry id
  std::string loss = "rce";
  double epsilon_255 = 10.0;
  bool smoothing = false;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  train::LabelMode label_mode = train::LabelMode::clean_prediction;
  std::optional<std::size_t> early_stop_patience;
  std::uint64_t seed = 0;
};

struct EvalEntry {
  std::vector<std::string> generators;  // generator names; empty -> the configured one
  std::vector<std::string> targets;     // classifier names
  std::string data;                     // DataEntry id, test split
  std::vector<double> epsilons_255{10.0};
  std::size_t samples = 1000;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "rapforge-out";
  std::vector<DataEntry> data;
  std::vector<ClassifierEntry> classifiers;
  std::optional<GeneratorEntry> generator;
  std::vector<GeneratorEntry> generators;  // extra generators for eval matrices
  std::optional<EvalEntry> eval;

  const DataEntry& data_entry(const std::string& id) const;
  const ClassifierEntry& classifier(const std::string& name) const;
  // The "generator" section or an entry of "generators".
  const GeneratorEntry& generator_entry(const std::string& name) const;
};

// Parses and schema-checks a JSON document. Unknown keys, wrong types and
// dangling references raise ConfigError before any work happens. Relative
// paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

// RAPFORGE_SEED, when set, replaces the master seed.
void apply_seed_override(ExperimentConfig& config);

// Seed for one named component, derived from the master seed.
std::uint64_t component_seed(const ExperimentConfig& config, const std::string& kind, const std::string& name,
                             std::uint64_t stream);

}  // namespace rap::cli
