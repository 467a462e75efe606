#include "sbl/anchors.hpp"

#include <algorithm>
#include <stdexcept>

namespace sbl {

void AnchorConfig::validate() const {
  if (aspect_ratios.empty() || scale_multipliers.empty()) {
    throw std::invalid_argument("anchor config: ratios and multipliers must be non-empty");
  }
  auto positive = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0 && std::isfinite(x); });
  };
  if (!positive(aspect_ratios) || !positive(scale_multipliers)) {
    throw std::invalid_argument("anchor config: ratios and multipliers must be positive");
  }
  if (base_sizes.size() != strides.size() || base_sizes.empty()) {
    throw std::invalid_argument("anchor config: base_sizes and strides need one entry per level");
  }
  if (!positive(base_sizes) || !positive(strides)) {
    throw std::invalid_argument("anchor config: base sizes and strides must be positive");
  }
  if (!(0.0 <= neg_threshold && neg_threshold <= pos_threshold && pos_threshold <= 1.0)) {
    throw std::invalid_argument("anchor config: need 0 <= neg_threshold <= pos_threshold <= 1");
  }
}

AnchorSet generate_anchors(int image_w, int image_h, const AnchorConfig& cfg) {
  if (image_w <= 0 || image_h <= 0) {
    throw std::invalid_argument("generate_anchors: image dimensions must be positive");
  }
  cfg.validate();

  // Shapes at the origin, one per (ratio, multiplier): w*h = (b*m)^2, w/h = r.
  AnchorSet set;
  set.per_location = cfg.anchors_per_location();
  set.image_w = image_w;
  set.image_h = image_h;
  for (std::size_t lvl = 0; lvl < cfg.strides.size(); ++lvl) {
    const double stride = cfg.strides[lvl];
    const double base = cfg.base_sizes[lvl];
    AnchorLevel level;
    level.stride = stride;
    level.base_size = base;
    level.grid_w = static_cast<int>(std::ceil(image_w / stride));
    level.grid_h = static_cast<int>(std::ceil(image_h / stride));
    level.offset = set.boxes.size();

    std::vector<std::pair<double, double>> shapes;
    for (double r : cfg.aspect_ratios) {
      for (double m : cfg.scale_multipliers) {
        const double side = base * m;
        const double h = side / std::sqrt(r);
        shapes.emplace_back(h * r, h);
      }
    }
    for (int row = 0; row < level.grid_h; ++row) {
      const double cy = (row + 0.5) * stride;
      for (int col = 0; col < level.grid_w; ++col) {
        const double cx = (col + 0.5) * stride;
        for (const auto& [w, h] : shapes) {
          set.boxes.push_back(Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
          set.level_of.push_back(static_cast<int>(lvl));
        }
      }
    }
    set.levels.push_back(level);
  }
  return set;
}

AssignmentMap assign_targets(const AnchorSet& anchors, std::span<const GroundTruth> gts,
                             double pos_threshold, double neg_threshold) {
  if (!(0.0 <= neg_threshold && neg_threshold <= pos_threshold && pos_threshold <= 1.0)) {
    throw std::invalid_argument("assign_targets: need 0 <= neg_thr <= pos_thr <= 1");
  }
  const std::size_t n = anchors.size();
  AssignmentMap out;
  out.labels.assign(n, AnchorLabel::kNegative);
  out.class_id.assign(n, -1);
  out.matched_gt.assign(n, -1);
  out.targets.assign(n, BoxDelta{});
  if (gts.empty()) return out;

  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> gt_best_iou(gts.size(), 0.0);
  std::vector<std::size_t> gt_best_anchor(gts.size(), 0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors.boxes[a], gts[g].box);
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = static_cast<int>(g);
      }
      if (v > gt_best_iou[g]) {
        gt_best_iou[g] = v;
        gt_best_anchor[g] = a;
      }
    }
  }

  auto make_positive = [&](std::size_t a, int g) {
    out.labels[a] = AnchorLabel::kPositive;
    out.matched_gt[a] = g;
    out.class_id[a] = gts[static_cast<std::size_t>(g)].class_id;
    out.targets[a] = encode_deltas(anchors.boxes[a], gts[static_cast<std::size_t>(g)].box);
  };

  for (std::size_t a = 0; a < n; ++a) {
    if (best_gt[a] >= 0 && best_iou[a] >= pos_threshold) {
      make_positive(a, best_gt[a]);
    } else if (best_iou[a] >= neg_threshold) {
      out.labels[a] = AnchorLabel::kIgnore;
    }
  }
  // Forced match: every gt overlapping at least one anchor claims its best anchor.
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best_iou[g] > 0.0) make_positive(gt_best_anchor[g], static_cast<int>(g));
  }

  out.num_positive = static_cast<std::size_t>(
      std::count(out.labels.begin(), out.labels.end(), AnchorLabel::kPositive));
  return out;
}

}  // namespace sbl
