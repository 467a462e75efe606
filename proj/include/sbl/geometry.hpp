#pragma once

#include <optional>
#include <span>
#include <vector>

namespace sbl {

/// Axis-aligned half-open rectangle in continuous pixel coordinates.
/// Width is x_max - x_min with no +1 correction.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  Box box;
  double score = 0.0;
  int class_id = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Anchor-relative regression target: center offsets normalized by anchor
/// size, log-scale size ratios. No variance scaling.
struct BoxDelta {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;

  bool finite() const;
};

/// Image extent used for clipping decoded boxes.
struct Extent {
  double width = 0.0;
  double height = 0.0;
};

double iou(const Box& a, const Box& b);

/// Greedy hard NMS applied independently per class. Ties in score keep the
/// lower input index first. Output is sorted by descending score.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold);

/// Throws std::invalid_argument for a non-positive anchor or a target with
/// zero width/height.
BoxDelta encode_deltas(const Box& anchor, const Box& target);

/// Inverse of encode_deltas. Clips to `clip` when given.
Box decode_deltas(const Box& anchor, const BoxDelta& delta,
                  std::optional<Extent> clip = std::nullopt);

Box clip_box(const Box& box, const Extent& extent);

}  // namespace sbl
