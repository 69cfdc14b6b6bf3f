#include "rapforge/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rapforge/ops.hpp"

namespace rap::losses {

namespace {

void check_logits(const Tensor& logits, std::span<const int> labels, const char* what) {
  if (logits.rank() != 2) throw ShapeError(std::string(what) + ": logits must be (batch, classes), got " + to_string(logits.shape()));
  if (logits.dim(0) != labels.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.dim(0)) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) {
      throw LabelError(std::string(what) + ": label " + std::to_string(y) + " outside [0, " +
                       std::to_string(logits.dim(1)) + ")");
    }
  }
}

void check_pair(const LogitPair& pair, const char* what) {
  if (pair.clean.shape() != pair.perturbed.shape()) {
    throw ShapeError(std::string(what) + ": clean logits " + to_string(pair.clean.shape()) +
                     " and perturbed logits " + to_string(pair.perturbed.shape()) + " differ in shape");
  }
  check_logits(pair.perturbed, pair.labels, what);
}

// Stable softmax of one row.
std::vector<double> softmax_row(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

Tensor grad_from_probs(const Tensor& logits_like, std::span<const int> labels, const std::vector<double>& probs) {
  const std::size_t c = logits_like.dim(1);
  std::vector<double> g = probs;
  for (std::size_t i = 0; i < labels.size(); ++i) g[i * c + static_cast<std::size_t>(labels[i])] -= 1.0;
  return Tensor::from(logits_like.shape(), std::move(g));
}

}  // namespace

LossKind LossKind::parse(const std::string& text) {
  if (text == "ce") return ce();
  if (text == "rce") return rce();
  const std::string prefix = "targeted:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string num = text.substr(prefix.size());
    if (!num.empty() && std::all_of(num.begin(), num.end(), [](char ch) { return ch >= '0' && ch <= '9'; }) &&
        num.size() < 6) {
      return targeted(std::stoi(num));
    }
  }
  throw ConfigError("invalid loss tag '" + text + "' (expected ce, rce or targeted:K)");
}

std::string LossKind::to_string() const {
  switch (tag_) {
    case Tag::ce:
      return "ce";
    case Tag::rce:
      return "rce";
    case Tag::targeted:
      return "targeted:" + std::to_string(target_);
  }
  return "?";
}

Tensor ce_loss(const Tensor& perturbed, std::span<const int> labels) {
  check_logits(perturbed, labels, "ce_loss");
  const Tensor picked = mul(log_softmax(perturbed), one_hot(labels, perturbed.dim(1)));
  return scale(sum(picked), -1.0 / static_cast<double>(labels.size()));
}

Tensor rce_loss(const LogitPair& pair) {
  check_pair(pair, "rce_loss");
  return ce_loss(sub(pair.perturbed, pair.clean.detach()), pair.labels);
}

Tensor targeted_loss(const LogitPair& pair, std::span<const int> targets) {
  check_pair(pair, "targeted_loss");
  if (targets.size() != pair.labels.size()) throw ShapeError("targeted_loss: one target per sample required");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == pair.labels[i]) {
      throw LabelError("targeted_loss: target " + std::to_string(targets[i]) + " equals the source label of sample " +
                       std::to_string(i));
    }
  }
  return add(ce_loss(pair.perturbed, targets), ce_loss(pair.clean, pair.labels));
}

Tensor attack_loss(const LossKind& kind, const LogitPair& pair) {
  switch (kind.tag()) {
    case LossKind::Tag::ce:
      return ce_loss(pair.perturbed, pair.labels);
    case LossKind::Tag::rce:
      return rce_loss(pair);
    case LossKind::Tag::targeted: {
      std::vector<int> targets(pair.labels.size(), kind.target());
      return targeted_loss(pair, targets);
    }
  }
  throw ConfigError("unhandled loss kind");
}

Tensor analytic_ce_grad(const Tensor& perturbed, std::span<const int> labels) {
  check_logits(perturbed, labels, "analytic_ce_grad");
  const std::size_t c = perturbed.dim(1);
  std::vector<double> probs(perturbed.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto p = softmax_row(perturbed.data().subspan(i * c, c));
    std::copy(p.begin(), p.end(), probs.begin() + static_cast<long>(i * c));
  }
  return grad_from_probs(perturbed, labels, probs);
}

Tensor analytic_rce_grad(const LogitPair& pair) {
  check_pair(pair, "analytic_rce_grad");
  const std::size_t c = pair.perturbed.dim(1);
  std::vector<double> probs(pair.perturbed.size());
  std::vector<double> diff(c);
  for (std::size_t i = 0; i < pair.labels.size(); ++i) {
    for (std::size_t j = 0; j < c; ++j) diff[j] = pair.perturbed[i * c + j] - pair.clean[i * c + j];
    auto r = softmax_row(diff);
    std::copy(r.begin(), r.end(), probs.begin() + static_cast<long>(i * c));
  }
  return grad_from_probs(pair.perturbed, pair.labels, probs);
}

double top_margin(std::span<const double> logits, int label) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k)
    if (static_cast<int>(k) != label) gap = std::min(gap, logits[static_cast<std::size_t>(label)] - logits[k]);
  return gap;
}

double bottom_margin(std::span<const double> logits, int label) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k)
    if (static_cast<int>(k) != label) gap = std::min(gap, logits[k] - logits[static_cast<std::size_t>(label)]);
  return gap;
}

Dominance dominance_check(std::span<const double> clean, std::span<const double> perturbed, int label, double margin) {
  if (clean.size() != perturbed.size() || clean.empty()) throw ShapeError("dominance_check: logit vectors differ in length");
  if (label < 0 || static_cast<std::size_t>(label) >= clean.size()) throw LabelError("dominance_check: label out of range");
  const std::size_t c = clean.size();
  const auto y = static_cast<std::size_t>(label);
  std::vector<double> diff(c);
  for (std::size_t j = 0; j < c; ++j) diff[j] = perturbed[j] - clean[j];
  const auto p = softmax_row(perturbed);
  const auto r = softmax_row(diff);

  Dominance d;
  double ce2 = 0.0, rce2 = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    const double ind = j == y ? 1.0 : 0.0;
    ce2 += (p[j] - ind) * (p[j] - ind);
    rce2 += (r[j] - ind) * (r[j] - ind);
  }
  d.ce_norm = std::sqrt(ce2);
  d.rce_norm = std::sqrt(rce2);
  d.dominant = d.rce_norm > d.ce_norm;
  d.ce_true_class = 1.0 - p[y];
  d.rce_true_class = 1.0 - r[y];
  d.precondition_held = c >= 2 && top_margin(clean, label) >= margin && bottom_margin(perturbed, label) >= margin;
  return d;
}

}  // namespace rap::losses
