#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sbl/geometry.hpp"

namespace sbl {

struct AnchorConfig {
  std::vector<double> aspect_ratios{1.0 / 3.0, 1.0, 3.0};  // width : height
  std::vector<double> scale_multipliers{2.0, std::sqrt(2.0), 0.3};
  std::vector<double> base_sizes{16.0, 32.0};
  std::vector<double> strides{8.0, 16.0};
  double pos_threshold = 0.5;
  double neg_threshold = 0.4;

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
  std::size_t anchors_per_location() const {
    return aspect_ratios.size() * scale_multipliers.size();
  }
};

struct AnchorLevel {
  int grid_w = 0;
  int grid_h = 0;
  double stride = 0.0;
  double base_size = 0.0;
  std::size_t offset = 0;  // index of the first anchor of this level in AnchorSet::boxes
  std::size_t count() const {
    return static_cast<std::size_t>(grid_w) * static_cast<std::size_t>(grid_h);
  }
};

/// Flat anchor list. Within a level, anchors are ordered by grid row, then
/// column, then aspect ratio, then scale multiplier (multiplier fastest).
struct AnchorSet {
  std::vector<AnchorLevel> levels;
  std::vector<Box> boxes;
  std::vector<int> level_of;
  std::size_t per_location = 0;
  int image_w = 0;
  int image_h = 0;

  std::size_t size() const { return boxes.size(); }
};

AnchorSet generate_anchors(int image_w, int image_h, const AnchorConfig& cfg);

struct GroundTruth {
  Box box;
  int class_id = 0;
};

enum class AnchorLabel : std::uint8_t { kNegative, kPositive, kIgnore };

struct AssignmentMap {
  std::vector<AnchorLabel> labels;
  std::vector<int> class_id;     // -1 unless positive
  std::vector<int> matched_gt;   // -1 unless positive
  std::vector<BoxDelta> targets; // meaningful only for positives
  std::size_t num_positive = 0;

  std::size_t size() const { return labels.size(); }
};

AssignmentMap assign_targets(const AnchorSet& anchors, std::span<const GroundTruth> gts,
                             double pos_threshold, double neg_threshold);

}  // namespace sbl
