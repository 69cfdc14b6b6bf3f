#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rapforge/data.hpp"
#include "rapforge/nets.hpp"
#include "rapforge/perturb.hpp"

namespace rap::eval {

// Logits of a frozen classifier, computed in batches without recording.
Tensor predict_logits(const nets::ClassifierNet& clf, const Tensor& images, std::size_t batch = 250);
// argmax with lowest-index tie-break.
std::vector<int> predict(const nets::ClassifierNet& clf, const Tensor& images, std::size_t batch = 250);

// Generator output -> optional smoothing -> projection, in batches.
Tensor generate_adversarial(const nets::GeneratorNet& gen, const Tensor& clean, const perturb::PerturbationBudget& budget,
                            const std::optional<perturb::SmoothingKernel>& smoothing = {}, std::size_t batch = 250);

// Percentage of samples whose predicted label changed.
double fooling_rate(std::span<const int> clean_pred, std::span<const int> adv_pred);
// Same, after checking ||adv - clean||_inf <= eps + 1e-9 (BudgetError otherwise).
double fooling_rate(const nets::ClassifierNet& clf, const Tensor& clean, const Tensor& adv,
                    const perturb::PerturbationBudget& budget);

struct Top1 {
  double top1_clean = 0.0;  // %
  double top1_adv = 0.0;    // %
  double err_increase = 0.0;  // percentage points
};
Top1 top1_from_predictions(std::span<const int> clean_pred, std::span<const int> adv_pred, std::span<const int> labels);
Top1 top1_and_error_increase(const nets::ClassifierNet& clf, const Tensor& clean, const Tensor& adv,
                             const std::optional<std::vector<int>>& labels);

// mean_i ||a'_i - a_i||_2 / ||a_i||_2; throws on a zero clean-logit row.
double logit_distance(const Tensor& clean_logits, const Tensor& adv_logits);
double logit_distance(const nets::ClassifierNet& clf, const Tensor& clean, const Tensor& adv);

// Percentage of samples with reference label != target that land on target.
double targeted_success_rate(std::span<const int> reference, std::span<const int> adv_pred, int target);

enum class ThreatModel { white_box, black_box, cross_domain_black_box, baseline };
std::string to_string(ThreatModel model);

// Something that turns clean images into adversarial ones: a trained
// generator with its provenance, or the Gaussian-noise baseline.
struct AttackSource {
  std::string id;
  std::optional<nets::GeneratorNet> generator;  // empty -> noise baseline
  std::optional<perturb::SmoothingKernel> smoothing;
  std::string trained_against;  // classifier id
  std::string trained_on;       // domain id

  static AttackSource noise_baseline(std::string id = "gaussian-noise");
  bool is_baseline() const { return !generator.has_value(); }
};

struct TargetClassifier {
  std::string id;
  const nets::ClassifierNet* net = nullptr;
  std::string trained_on;  // domain id
};

// white_box iff the generator trained against this very classifier;
// black_box when it trained on the classifier's own domain; otherwise
// cross-domain black box.
ThreatModel classify_threat(const AttackSource& source, const TargetClassifier& target);

struct EvalReport {
  std::string generator, classifier, dataset;
  ThreatModel threat_model = ThreatModel::white_box;
  double epsilon = 0.0;  // normalized units
  std::size_t n_samples = 0;
  double fool_rate = 0.0;
  std::optional<double> top1_clean, top1_adv, err_increase;
  double logit_l2 = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::string> error;  // set when the cell failed
};

EvalReport evaluate(const AttackSource& source, const TargetClassifier& target, const data::DatasetHandle& samples,
                    const perturb::PerturbationBudget& budget, std::uint64_t seed);

struct TransferMatrix {
  std::vector<std::string> sources, targets;
  std::vector<EvalReport> cells;  // row-major: source x target
  const EvalReport& at(std::size_t source, std::size_t target) const { return cells[source * targets.size() + target]; }
};

// Every cell sees the identical sample set; a failing cell records its
// error instead of aborting the matrix.
TransferMatrix run_transfer_matrix(const std::vector<AttackSource>& sources, const std::vector<TargetClassifier>& targets,
                                   const data::DatasetHandle& samples, const perturb::PerturbationBudget& budget,
                                   std::uint64_t seed);

inline constexpr const char* kCsvHeader =
    "generator,classifier,dataset,threat_model,epsilon,n,fool_rate,top1_clean,top1_adv,err_increase,logit_l2,seed";

// One row per report; epsilon is written in 0-255 units.
void write_csv(std::ostream& out, const std::vector<EvalReport>& reports);

}  // namespace rap::eval
