#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbl/data.hpp"
#include "sbl/geometry.hpp"

namespace sbl {

enum class Interpolation { kElevenPoint, kAllPoint };

Interpolation parse_interpolation(const std::string& name);

struct PrPoint {
  double score = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

enum class MatchOutcome { kTruePositive, kFalsePositive, kIgnored };

/// Greedy matching of one image's single-class detections (any order) against
/// its ground truth. Each detection, in descending score order, claims the
/// highest-IoU unmatched ground truth at or above `iou_threshold`. A
/// detection whose best candidate is a difficult box is ignored.
/// Result is indexed like `dets`.
std::vector<MatchOutcome> match_detections(std::span<const Detection> dets,
                                           std::span<const Annotation> gts, double iou_threshold);

struct ClassEval {
  int class_id = 0;
  double ap = 0.0;
  std::size_t num_gt = 0;  // non-difficult
  std::size_t tp = 0;      // at the score threshold
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<PrPoint> curve;
  bool undefined = false;  // no ground truth
};

struct ImageResult {
  std::vector<Detection> detections;
  std::vector<Annotation> ground_truth;
};

/// AP from a ranked TP/FP sequence.
double ap_from_curve(const std::vector<PrPoint>& curve, Interpolation interp);

ClassEval evaluate_class(std::span<const ImageResult> images, int class_id, double iou_threshold,
                         double score_threshold, Interpolation interp = Interpolation::kElevenPoint);

/// Single-image, single-class AP (class ids are ignored). Empty ground truth
/// yields 0.
double average_precision(std::span<const Detection> dets, std::span<const Box> gts,
                         double iou_threshold, Interpolation interp = Interpolation::kElevenPoint);

/// Unweighted mean. Throws std::invalid_argument on an empty map.
double mean_average_precision(const std::map<int, double>& per_class);

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

PrecisionRecallF1 precision_recall_f1(std::span<const Detection> dets, std::span<const Box> gts,
                                      double iou_threshold, double score_threshold);

struct EvalResult {
  std::vector<std::string> class_names;
  std::map<int, ClassEval> per_class;  // classes with at least one ground-truth box
  double map = 0.0;
  double iou_threshold = 0.5;
  double score_threshold = 0.0;
  Interpolation interpolation = Interpolation::kElevenPoint;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

EvalResult evaluate(std::span<const ImageResult> images, const std::vector<std::string>& class_names,
                    double iou_threshold, double score_threshold,
                    Interpolation interp = Interpolation::kElevenPoint);

nlohmann::json to_json(const EvalResult& result);
/// CSV: class,score,precision,recall.
std::string pr_curves_csv(const EvalResult& result);

}  // namespace sbl
