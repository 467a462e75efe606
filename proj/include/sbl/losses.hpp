#pragma once

#include <span>

#include "sbl/anchors.hpp"
#include "sbl/geometry.hpp"

namespace sbl {

/// Probabilities are clamped to [kProbEpsilon, 1 - kProbEpsilon] before logs.
inline constexpr double kProbEpsilon = 1e-7;

struct FocalConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  // When false the class-balance factor is dropped (weight 1 for both labels).
  bool alpha_balanced = true;

  void validate() const;
};

/// Per-image audit record of one training step.
struct LossBreakdown {
  double raw_salience = 0.0;
  double weight = 1.0;      // normalized salience S'
  double focal_sum = 0.0;   // un-normalized classification loss
  double l1_sum = 0.0;      // un-normalized regression loss
  std::size_t num_pos = 0;
  double total = 0.0;
};

double cross_entropy(double p, int y);
double focal_loss(double p, int y, const FocalConfig& cfg);

/// d focal_loss(sigmoid(logit), y) / d logit, analytic.
double focal_loss_grad_logit(double logit, int y, const FocalConfig& cfg);

double smooth_l1(const BoxDelta& pred, const BoxDelta& target, double beta = 1.0);

/// Gradient of smooth_l1 with respect to `pred`.
BoxDelta smooth_l1_grad(const BoxDelta& pred, const BoxDelta& target, double beta = 1.0);

/// Classification loss scaled by the per-image salience weight.
double salience_biased_loss(double classification_loss, double s_prime);

/// class_probs is anchor-major: class_probs[a * num_classes + k].
/// Ignored anchors contribute to neither term.
LossBreakdown total_loss(const AssignmentMap& assignments, std::span<const double> class_probs,
                         std::span<const BoxDelta> box_preds, std::size_t num_classes,
                         double s_prime, const FocalConfig& cfg, double beta = 1.0);

/// Logit-space variant used by the trainer. Fills d total / d logit and
/// d total / d box_pred (same layouts as the inputs).
LossBreakdown total_loss_with_grad(const AssignmentMap& assignments,
                                   std::span<const float> class_logits,
                                   std::span<const BoxDelta> box_preds, std::size_t num_classes,
                                   double s_prime, const FocalConfig& cfg, double beta,
                                   std::span<float> grad_logits, std::span<BoxDelta> grad_box);

double sigmoid(double x);

}  // namespace sbl
