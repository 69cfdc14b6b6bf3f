#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rapforge/tensor.hpp"

// Attack objectives on classifier logits and their closed-form gradients.
//
// a  : logits of the clean images, shape (batch, c)
// a' : logits of the perturbed images, shape (batch, c)
// y  : reference labels (ground truth or clean predictions)
//
// All losses reduce over the batch by mean.
namespace rap::losses {

struct LogitPair {
  Tensor clean;      // a
  Tensor perturbed;  // a'
  std::vector<int> labels;
};

class LossKind {
 public:
  enum class Tag { ce, rce, targeted };

  static LossKind ce() { return LossKind(Tag::ce, -1); }
  static LossKind rce() { return LossKind(Tag::rce, -1); }
  static LossKind targeted(int target) { return LossKind(Tag::targeted, target); }
  // "ce", "rce" or "targeted:K"
  static LossKind parse(const std::string& text);

  Tag tag() const { return tag_; }
  int target() const { return target_; }
  // Untargeted objectives are maximized, the targeted one minimized.
  bool maximize() const { return tag_ != Tag::targeted; }
  std::string to_string() const;

  bool operator==(const LossKind&) const = default;

 private:
  LossKind(Tag tag, int target) : tag_(tag), target_(target) {}
  Tag tag_;
  int target_;
};

// mean_i -log softmax(a'_i)[y_i]
Tensor ce_loss(const Tensor& perturbed, std::span<const int> labels);

// mean_i -log softmax(a'_i - a_i)[y_i]. The clean logits are treated as a
// constant: no gradient flows into pair.clean.
Tensor rce_loss(const LogitPair& pair);

// CE(a', y') + CE(a, y). The second term carries no gradient to anything
// that produced a' (the clean images never pass through the generator).
Tensor targeted_loss(const LogitPair& pair, std::span<const int> targets);

// Dispatch on kind; `pair.clean` is unused by CE.
Tensor attack_loss(const LossKind& kind, const LogitPair& pair);

// dCE/da' = softmax(a') - onehot(y), per sample (no batch averaging).
Tensor analytic_ce_grad(const Tensor& perturbed, std::span<const int> labels);
// dRCE/da' = softmax(a' - a) - onehot(y), per sample.
Tensor analytic_rce_grad(const LogitPair& pair);

struct Dominance {
  double rce_norm = 0.0;  // ||dRCE/da'||_2
  double ce_norm = 0.0;   // ||dCE/da'||_2
  bool dominant = false;  // rce_norm > ce_norm
  // Clean logit y is the maximum and perturbed logit y the minimum, each by
  // at least the margin.
  bool precondition_held = false;
  // |d/da'_y| for both losses, i.e. 1 - r_y and 1 - p'_y.
  double rce_true_class = 0.0;
  double ce_true_class = 0.0;
};

// Single-sample comparison of the two gradient magnitudes. `clean` and
// `perturbed` are 1-D logit vectors.
Dominance dominance_check(std::span<const double> clean, std::span<const double> perturbed, int label,
                          double margin = 1.0);

// Margin by which a[y] exceeds every other entry (negative if it does not).
double top_margin(std::span<const double> logits, int label);
// Margin by which a[y] is below every other entry.
double bottom_margin(std::span<const double> logits, int label);

}  // namespace rap::losses
