#include "sbl/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sbl {

bool Box::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
}

bool BoxDelta::finite() const {
  return std::isfinite(tx) && std::isfinite(ty) && std::isfinite(tw) && std::isfinite(th);
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  if (iou_threshold < 0.0 || iou_threshold > 1.0) {
    throw std::invalid_argument("nms: iou_threshold must lie in [0, 1]");
  }
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });

  std::vector<std::size_t> kept;
  std::vector<bool> suppressed(dets.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t cur = order[i];
    if (suppressed[cur]) continue;
    kept.push_back(cur);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (suppressed[other] || dets[other].class_id != dets[cur].class_id) continue;
      if (iou(dets[cur].box, dets[other].box) > iou_threshold) suppressed[other] = true;
    }
  }

  std::vector<Detection> out;
  out.reserve(kept.size());
  for (std::size_t idx : kept) out.push_back(dets[idx]);
  return out;
}

BoxDelta encode_deltas(const Box& anchor, const Box& target) {
  if (!(anchor.width() > 0.0 && anchor.height() > 0.0)) {
    throw std::invalid_argument("encode_deltas: anchor must have positive width and height");
  }
  if (!target.valid() || target.width() <= 0.0 || target.height() <= 0.0) {
    throw std::invalid_argument("encode_deltas: target box has zero width or height");
  }
  return BoxDelta{(target.center_x() - anchor.center_x()) / anchor.width(),
                  (target.center_y() - anchor.center_y()) / anchor.height(),
                  std::log(target.width() / anchor.width()),
                  std::log(target.height() / anchor.height())};
}

Box decode_deltas(const Box& anchor, const BoxDelta& delta, std::optional<Extent> clip) {
  if (!(anchor.width() > 0.0 && anchor.height() > 0.0)) {
    throw std::invalid_argument("decode_deltas: anchor must have positive width and height");
  }
  if (!delta.finite()) throw std::invalid_argument("decode_deltas: non-finite delta");
  const double cx = anchor.center_x() + delta.tx * anchor.width();
  const double cy = anchor.center_y() + delta.ty * anchor.height();
  const double w = anchor.width() * std::exp(delta.tw);
  const double h = anchor.height() * std::exp(delta.th);
  Box out{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  if (clip) out = clip_box(out, *clip);
  return out;
}

Box clip_box(const Box& box, const Extent& extent) {
  auto cl = [](double v, double hi) { return std::clamp(v, 0.0, hi); };
  return Box{cl(box.x_min, extent.width), cl(box.y_min, extent.height),
             cl(box.x_max, extent.width), cl(box.y_max, extent.height)};
}

}  // namespace sbl
