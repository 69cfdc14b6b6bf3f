#include "rapforge/eval.hpp"

#include <cmath>
#include <cstdio>

#include "rapforge/ops.hpp"

namespace rap::eval {

namespace {

// Runs fn over contiguous batches of `images` and concatenates the outputs
// along the batch axis.
template <typename Fn>
Tensor batched(const Tensor& images, std::size_t batch, Fn fn) {
  if (images.rank() < 1) throw ShapeError("batched evaluation needs a batch axis");
  const std::size_t n = images.dim(0);
  const std::size_t per = images.size() / n;
  std::vector<double> out;
  Shape out_shape;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t len = std::min(batch, n - start);
    Shape shape = images.shape();
    shape[0] = len;
    std::vector<double> chunk(images.data().begin() + static_cast<long>(start * per),
                              images.data().begin() + static_cast<long>((start + len) * per));
    Tensor result = fn(Tensor::from(std::move(shape), std::move(chunk)));
    if (out_shape.empty()) out_shape = result.shape();
    out.insert(out.end(), result.data().begin(), result.data().end());
  }
  out_shape[0] = n;
  return Tensor::from(std::move(out_shape), std::move(out));
}

std::string format_double(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

Tensor predict_logits(const nets::ClassifierNet& clf, const Tensor& images, std::size_t batch) {
  NoGradGuard no_grad;
  return batched(images, batch, [&clf](const Tensor& x) { return clf.forward(x); });
}

std::vector<int> predict(const nets::ClassifierNet& clf, const Tensor& images, std::size_t batch) {
  return argmax_rows(predict_logits(clf, images, batch));
}

Tensor generate_adversarial(const nets::GeneratorNet& gen, const Tensor& clean, const perturb::PerturbationBudget& budget,
                            const std::optional<perturb::SmoothingKernel>& smoothing, std::size_t batch) {
  NoGradGuard no_grad;
  return batched(clean, batch, [&](const Tensor& x) {
    Tensor g = gen.forward(x);
    if (smoothing) g = perturb::smooth(g, *smoothing);
    return perturb::project(x, g, budget);
  });
}

double fooling_rate(std::span<const int> clean_pred, std::span<const int> adv_pred) {
  if (clean_pred.size() != adv_pred.size() || clean_pred.empty()) {
    throw ShapeError("fooling_rate: prediction lists must be non-empty and equally long");
  }
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < clean_pred.size(); ++i) flipped += clean_pred[i] != adv_pred[i];
  return 100.0 * static_cast<double>(flipped) / static_cast<double>(clean_pred.size());
}

double fooling_rate(const nets::ClassifierNet& clf, const Tensor& clean, const Tensor& adv,
                    const perturb::PerturbationBudget& budget) {
  if (clean.shape() != adv.shape()) {
    throw ShapeError("fooling_rate: clean " + rap::to_string(clean.shape()) + " vs adversarial " + rap::to_string(adv.shape()));
  }
  const double dev = perturb::linf_distance(clean, adv);
  if (dev > budget.epsilon + 1e-9) {
    throw BudgetError("adversarial batch deviates by " + std::to_string(dev) + " > epsilon " +
                      std::to_string(budget.epsilon));
  }
  return fooling_rate(predict(clf, clean), predict(clf, adv));
}

Top1 top1_from_predictions(std::span<const int> clean_pred, std::span<const int> adv_pred, std::span<const int> labels) {
  if (clean_pred.size() != labels.size() || adv_pred.size() != labels.size() || labels.empty()) {
    throw ShapeError("top1: predictions and labels must be non-empty and equally long");
  }
  std::size_t hit_clean = 0, hit_adv = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hit_clean += clean_pred[i] == labels[i];
    hit_adv += adv_pred[i] == labels[i];
  }
  const double n = static_cast<double>(labels.size());
  Top1 t;
  t.top1_clean = 100.0 * static_cast<double>(hit_clean) / n;
  t.top1_adv = 100.0 * static_cast<double>(hit_adv) / n;
  // error = 100 - accuracy, so the increase is the accuracy drop
  t.err_increase = (100.0 - t.top1_adv) - (100.0 - t.top1_clean);
  return t;
}

Top1 top1_and_error_increase(const nets::ClassifierNet& clf, const Tensor& clean, const Tensor& adv,
                             const std::optional<std::vector<int>>& labels) {
  if (!labels) throw DataError(DataError::Kind::missing_labels, "top-1 accuracy needs labels");
  return top1_from_predictions(predict(clf, clean), predict(clf, adv), *labels);
}

double logit_distance(const Tensor& clean_logits, const Tensor& adv_logits) {
  if (clean_logits.shape() != adv_logits.shape() || clean_logits.rank() != 2) {
    throw ShapeError("logit_distance: " + rap::to_string(clean_logits.shape()) + " vs " + rap::to_string(adv_logits.shape()));
  }
  const std::size_t n = clean_logits.dim(0), c = clean_logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double a = clean_logits[i * c + j], b = adv_logits[i * c + j];
      num += (b - a) * (b - a);
      den += a * a;
    }
    if (den == 0.0) throw Error("logit_distance: clean logits of sample " + std::to_string(i) + " have zero norm");
    total += std::sqrt(num) / std::sqrt(den);
  }
  return total / static_cast<double>(n);
}

double logit_distance(const nets::ClassifierNet& clf, const Tensor& clean, const Tensor& adv) {
  return logit_distance(predict_logits(clf, clean), predict_logits(clf, adv));
}

double targeted_success_rate(std::span<const int> reference, std::span<const int> adv_pred, int target) {
  if (reference.size() != adv_pred.size()) throw ShapeError("targeted_success_rate: length mismatch");
  std::size_t eligible = 0, hits = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i] == target) continue;
    ++eligible;
    hits += adv_pred[i] == target;
  }
  if (eligible == 0) throw LabelError("targeted_success_rate: every sample already has the target label");
  return 100.0 * static_cast<double>(hits) / static_cast<double>(eligible);
}

std::string to_string(ThreatModel model) {
  switch (model) {
    case ThreatModel::white_box:
      return "white_box";
    case ThreatModel::black_box:
      return "black_box";
    case ThreatModel::cross_domain_black_box:
      return "cross_domain_black_box";
    case ThreatModel::baseline:
      return "baseline";
  }
  return "?";
}

AttackSource AttackSource::noise_baseline(std::string id) {
  AttackSource s;
  s.id = std::move(id);
  return s;
}

ThreatModel classify_threat(const AttackSource& source, const TargetClassifier& target) {
  if (source.is_baseline()) return ThreatModel::baseline;
  if (source.trained_against == target.id) return ThreatModel::white_box;
  if (source.trained_on == target.trained_on) return ThreatModel::black_box;
  return ThreatModel::cross_domain_black_box;
}

EvalReport evaluate(const AttackSource& source, const TargetClassifier& target, const data::DatasetHandle& samples,
                    const perturb::PerturbationBudget& budget, std::uint64_t seed) {
  if (!target.net) throw Error("evaluate: target classifier '" + target.id + "' is not loaded");
  EvalReport r;
  r.generator = source.id;
  r.classifier = target.id;
  r.dataset = samples.name;
  r.threat_model = classify_threat(source, target);
  r.epsilon = budget.epsilon;
  r.n_samples = samples.size();
  r.seed = seed;

  const Tensor& clean = samples.images;
  const Tensor adv = source.is_baseline() ? perturb::gaussian_noise_baseline(clean, budget, seed)
                                          : generate_adversarial(*source.generator, clean, budget, source.smoothing);
  const Tensor clean_logits = predict_logits(*target.net, clean);
  const Tensor adv_logits = predict_logits(*target.net, adv);
  const double dev = perturb::linf_distance(clean, adv);
  if (dev > budget.epsilon + 1e-9) throw BudgetError("cell " + source.id + "/" + target.id + " exceeds the budget");
  const auto clean_pred = argmax_rows(clean_logits);
  const auto adv_pred = argmax_rows(adv_logits);
  r.fool_rate = fooling_rate(clean_pred, adv_pred);
  r.logit_l2 = logit_distance(clean_logits, adv_logits);
  if (samples.labels) {
    const Top1 t = top1_from_predictions(clean_pred, adv_pred, *samples.labels);
    r.top1_clean = t.top1_clean;
    r.top1_adv = t.top1_adv;
    r.err_increase = t.err_increase;
  }
  return r;
}

TransferMatrix run_transfer_matrix(const std::vector<AttackSource>& sources, const std::vector<TargetClassifier>& targets,
                                   const data::DatasetHandle& samples, const perturb::PerturbationBudget& budget,
                                   std::uint64_t seed) {
  TransferMatrix m;
  for (const auto& s : sources) m.sources.push_back(s.id);
  for (const auto& t : targets) m.targets.push_back(t.id);
  for (const auto& s : sources) {
    for (const auto& t : targets) {
      try {
        m.cells.push_back(evaluate(s, t, samples, budget, seed));
      } catch (const std::exception& e) {
        EvalReport failed;
        failed.generator = s.id;
        failed.classifier = t.id;
        failed.dataset = samples.name;
        failed.threat_model = classify_threat(s, t);
        failed.epsilon = budget.epsilon;
        failed.seed = seed;
        failed.error = e.what();
        m.cells.push_back(std::move(failed));
      }
    }
  }
  return m;
}

void write_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << kCsvHeader << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v, 4) : std::string(); };
  for (const auto& r : reports) {
    out << r.generator << ',' << r.classifier << ',' << r.dataset << ',' << to_string(r.threat_model) << ','
        << format_double(r.epsilon * 255.0, 3) << ',' << r.n_samples << ','
        << (r.error ? std::string() : format_double(r.fool_rate, 4)) << ',' << opt(r.top1_clean) << ','
        << opt(r.top1_adv) << ',' << opt(r.err_increase) << ','
        << (r.error ? std::string() : format_double(r.logit_l2, 6)) << ',' << r.seed << '\n';
  }
}

}  // namespace rap::eval
