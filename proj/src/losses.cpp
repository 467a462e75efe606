#include "sbl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sbl {

namespace {

void check_label(int y) {
  if (y != 0 && y != 1) throw std::invalid_argument("loss: label must be 0 or 1");
}

double class_weight(int y, const FocalConfig& cfg) {
  if (!cfg.alpha_balanced) return 1.0;
  return y == 1 ? cfg.alpha : 1.0 - cfg.alpha;
}

double smooth_l1_component(double d, double beta) {
  const double ad = std::abs(d);
  return ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
}

double smooth_l1_component_grad(double d, double beta) {
  if (std::abs(d) < beta) return d / beta;
  return d > 0.0 ? 1.0 : -1.0;
}

}  // namespace

void FocalConfig::validate() const {
  if (!(gamma >= 0.0)) throw std::invalid_argument("focal loss: gamma must be >= 0");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("focal loss: alpha must lie in (0, 1]");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double cross_entropy(double p, int y) {
  check_label(y);
  const double pc = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
  return y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
}

double focal_loss(double p, int y, const FocalConfig& cfg) {
  cfg.validate();
  check_label(y);
  const double pc = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
  const double p_t = y == 1 ? pc : 1.0 - pc;
  const double modulator = cfg.gamma == 0.0 ? 1.0 : std::pow(1.0 - p_t, cfg.gamma);
  return class_weight(y, cfg) * modulator * -std::log(p_t);
}

double focal_loss_grad_logit(double logit, int y, const FocalConfig& cfg) {
  check_label(y);
  // With p_t = sigmoid(s * logit), s = +1 for y = 1 and -1 for y = 0:
  //   dL/dlogit = s * w * (1-p_t)^g * (g * p_t * log p_t - (1 - p_t)).
  const double s = y == 1 ? 1.0 : -1.0;
  const double p_t = std::clamp(sigmoid(s * logit), kProbEpsilon, 1.0 - kProbEpsilon);
  const double q = 1.0 - p_t;
  const double modulator = cfg.gamma == 0.0 ? 1.0 : std::pow(q, cfg.gamma);
  return s * class_weight(y, cfg) * modulator * (cfg.gamma * p_t * std::log(p_t) - q);
}

double smooth_l1(const BoxDelta& pred, const BoxDelta& target, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be positive");
  if (!pred.finite() || !target.finite()) throw std::invalid_argument("smooth_l1: non-finite input");
  return smooth_l1_component(pred.tx - target.tx, beta) +
         smooth_l1_component(pred.ty - target.ty, beta) +
         smooth_l1_component(pred.tw - target.tw, beta) +
         smooth_l1_component(pred.th - target.th, beta);
}

BoxDelta smooth_l1_grad(const BoxDelta& pred, const BoxDelta& target, double beta) {
  return BoxDelta{smooth_l1_component_grad(pred.tx - target.tx, beta),
                  smooth_l1_component_grad(pred.ty - target.ty, beta),
                  smooth_l1_component_grad(pred.tw - target.tw, beta),
                  smooth_l1_component_grad(pred.th - target.th, beta)};
}

double salience_biased_loss(double classification_loss, double s_prime) {
  if (!(s_prime >= 0.0)) throw std::invalid_argument("salience_biased_loss: weight must be >= 0");
  if (!(classification_loss >= 0.0)) {
    throw std::invalid_argument("salience_biased_loss: classification loss must be >= 0");
  }
  return s_prime * classification_loss;
}

LossBreakdown total_loss(const AssignmentMap& assignments, std::span<const double> class_probs,
                         std::span<const BoxDelta> box_preds, std::size_t num_classes,
                         double s_prime, const FocalConfig& cfg, double beta) {
  const std::size_t n = assignments.size();
  if (class_probs.size() != n * num_classes || box_preds.size() != n) {
    throw std::invalid_argument("total_loss: prediction arrays are not aligned with the anchor set");
  }
  cfg.validate();
  LossBreakdown out;
  out.weight = s_prime;
  for (std::size_t a = 0; a < n; ++a) {
    const AnchorLabel label = assignments.labels[a];
    if (label == AnchorLabel::kIgnore) continue;
    for (std::size_t k = 0; k < num_classes; ++k) {
      const int y = (label == AnchorLabel::kPositive &&
                     assignments.class_id[a] == static_cast<int>(k)) ? 1 : 0;
      out.focal_sum += focal_loss(class_probs[a * num_classes + k], y, cfg);
    }
    if (label == AnchorLabel::kPositive) {
      out.l1_sum += smooth_l1(box_preds[a], assignments.targets[a], beta);
      ++out.num_pos;
    }
  }
  const double norm = static_cast<double>(std::max<std::size_t>(out.num_pos, 1));
  out.total = salience_biased_loss(out.focal_sum / norm, s_prime) + out.l1_sum / norm;
  return out;
}

LossBreakdown total_loss_with_grad(const AssignmentMap& assignments,
                                   std::span<const float> class_logits,
                                   std::span<const BoxDelta> box_preds, std::size_t num_classes,
                                   double s_prime, const FocalConfig& cfg, double beta,
                                   std::span<float> grad_logits, std::span<BoxDelta> grad_box) {
  const std::size_t n = assignments.size();
  if (class_logits.size() != n * num_classes || box_preds.size() != n ||
      grad_logits.size() != class_logits.size() || grad_box.size() != n) {
    throw std::invalid_argument("total_loss: prediction arrays are not aligned with the anchor set");
  }
  cfg.validate();
  if (!(s_prime >= 0.0)) throw std::invalid_argument("total_loss: weight must be >= 0");

  std::size_t num_pos = assignments.num_positive;
  const double norm = static_cast<double>(std::max<std::size_t>(num_pos, 1));
  const double cls_scale = s_prime / norm;
  const double reg_scale = 1.0 / norm;

  LossBreakdown out;
  out.weight = s_prime;
  out.num_pos = num_pos;
  for (std::size_t a = 0; a < n; ++a) {
    const AnchorLabel label = assignments.labels[a];
    grad_box[a] = BoxDelta{};
    if (label == AnchorLabel::kIgnore) {
      for (std::size_t k = 0; k < num_classes; ++k) grad_logits[a * num_classes + k] = 0.0F;
      continue;
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
      const int y = (label == AnchorLabel::kPositive &&
                     assignments.class_id[a] == static_cast<int>(k)) ? 1 : 0;
      const double logit = class_logits[a * num_classes + k];
      out.focal_sum += focal_loss(sigmoid(logit), y, cfg);
      grad_logits[a * num_classes + k] =
          static_cast<float>(cls_scale * focal_loss_grad_logit(logit, y, cfg));
    }
    if (label == AnchorLabel::kPositive) {
      out.l1_sum += smooth_l1(box_preds[a], assignments.targets[a], beta);
      const BoxDelta g = smooth_l1_grad(box_preds[a], assignments.targets[a], beta);
      grad_box[a] = BoxDelta{g.tx * reg_scale, g.ty * reg_scale, g.tw * reg_scale, g.th * reg_scale};
    }
  }
  out.total = salience_biased_loss(out.focal_sum / norm, s_prime) + out.l1_sum / norm;
  return out;
}

}  // namespace sbl
