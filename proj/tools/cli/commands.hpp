#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "config.hpp"

namespace rap::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kRuntimeError = 3;
inline constexpr int kAuditFailure = 4;

// Raised when the attack audit finds a pixel over budget.
class AuditError : public Error {
 public:
  using Error::Error;
};

// Artifact locations under out_dir.
std::filesystem::path classifier_weights(const ExperimentConfig& cfg, const std::string& name);
std::filesystem::path classifier_meta(const ExperimentConfig& cfg, const std::string& name);
std::filesystem::path generator_dir(const ExperimentConfig& cfg, const std::string& name);

// Trains one named classifier, or every configured one when name is empty.
void cmd_train_classifier(const ExperimentConfig& cfg, const std::string& name, std::ostream& log);

struct GeneratorOverrides {
  std::optional<std::string> loss;
  bool smoothing = false;
  std::optional<std::string> name;
};
void cmd_train_generator(const ExperimentConfig& cfg, const GeneratorOverrides& overrides, std::ostream& log);

struct AttackOptions {
  std::filesystem::path generator;  // weight file
  std::string dataset;              // data entry id
  double epsilon_255 = 10.0;
  std::filesystem::path out;
  std::size_t count = 16;
  std::string smoothing = "auto";  // auto | on | off
};
void cmd_attack(const ExperimentConfig& cfg, const AttackOptions& options, std::ostream& log);

void cmd_eval(const ExperimentConfig& cfg, std::ostream& log);

struct GradlabOptions {
  std::size_t trials = 10000;
  double margin = 1.0;
  std::size_t classes = 10;
  std::size_t steps = 40;
  std::optional<std::filesystem::path> out;  // default out_dir/gradlab
};
void cmd_gradlab(const ExperimentConfig& cfg, const GradlabOptions& options, std::ostream& log);

// Full command line entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace rap::cli
