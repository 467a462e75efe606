#include "sbl/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "sbl/errors.hpp"

namespace sbl {

Interpolation parse_interpolation(const std::string& name) {
  if (name == "11point" || name == "voc07") return Interpolation::kElevenPoint;
  if (name == "allpoint" || name == "voc10") return Interpolation::kAllPoint;
  throw ConfigError("unknown AP interpolation '" + name + "' (expected 11point or allpoint)");
}

namespace {

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

double safe_div(double a, double b) { return b > 0.0 ? a / b : 0.0; }

double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

std::vector<MatchOutcome> match_detections(std::span<const Detection> dets,
                                           std::span<const Annotation> gts, double iou_threshold) {
  std::vector<MatchOutcome> out(dets.size(), MatchOutcome::kFalsePositive);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d : score_order(dets)) {
    double best = -1.0;
    std::ptrdiff_t best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] && !gts[g].difficult) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_gt = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (best_gt < 0) continue;
    const auto g = static_cast<std::size_t>(best_gt);
    if (gts[g].difficult) {
      out[d] = MatchOutcome::kIgnored;
    } else {
      taken[g] = true;
      out[d] = MatchOutcome::kTruePositive;
    }
  }
  return out;
}

double ap_from_curve(const std::vector<PrPoint>& curve, Interpolation interp) {
  if (interp == Interpolation::kElevenPoint) {
    double sum = 0.0;
    for (int i = 0; i <= 10; ++i) {
      const double t = i / 10.0;
      double best = 0.0;
      for (const auto& p : curve) {
        if (p.recall >= t) best = std::max(best, p.precision);
      }
      sum += best;
    }
    return sum / 11.0;
  }
  // Area under the monotone precision envelope.
  std::vector<double> rec{0.0};
  std::vector<double> prec{0.0};
  for (const auto& p : curve) {
    rec.push_back(p.recall);
    prec.push_back(p.precision);
  }
  rec.push_back(1.0);
  prec.push_back(0.0);
  for (std::size_t i = prec.size() - 1; i > 0; --i) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < rec.size(); ++i) {
    if (rec[i] != rec[i - 1]) ap += (rec[i] - rec[i - 1]) * prec[i];
  }
  return ap;
}

ClassEval evaluate_class(std::span<const ImageResult> images, int class_id, double iou_threshold,
                         double score_threshold, Interpolation interp) {
  struct Ranked {
    double score;
    std::size_t image;
    std::size_t index;
    MatchOutcome outcome;
  };
  ClassEval ev;
  ev.class_id = class_id;
  std::vector<Ranked> ranked;
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<Detection> dets;
    std::vector<Annotation> gts;
    for (const auto& d : images[i].detections) {
      if (d.class_id == class_id) dets.push_back(d);
    }
    for (const auto& g : images[i].ground_truth) {
      if (g.class_id != class_id) continue;
      gts.push_back(g);
      if (!g.difficult) ++ev.num_gt;
    }
    const auto outcomes = match_detections(dets, gts, iou_threshold);
    for (std::size_t d = 0; d < dets.size(); ++d) ranked.push_back({dets[d].score, i, d, outcomes[d]});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.image < b.image;
  });

  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const auto& r : ranked) {
    if (r.outcome == MatchOutcome::kIgnored) continue;
    (r.outcome == MatchOutcome::kTruePositive ? tp : fp) += 1;
    ev.curve.push_back(PrPoint{r.score, safe_div(static_cast<double>(tp), static_cast<double>(tp + fp)),
                               safe_div(static_cast<double>(tp), static_cast<double>(ev.num_gt))});
    if (r.score >= score_threshold) {
      ev.tp = tp;
      ev.fp = fp;
    }
  }
  ev.undefined = ev.num_gt == 0;
  ev.ap = ev.undefined ? 0.0 : ap_from_curve(ev.curve, interp);
  ev.fn = ev.num_gt - ev.tp;
  ev.precision = safe_div(static_cast<double>(ev.tp), static_cast<double>(ev.tp + ev.fp));
  ev.recall = safe_div(static_cast<double>(ev.tp), static_cast<double>(ev.num_gt));
  ev.f1 = f1_score(ev.precision, ev.recall);
  return ev;
}

double average_precision(std::span<const Detection> dets, std::span<const Box> gts, double iou_threshold,
                         Interpolation interp) {
  ImageResult img;
  for (auto d : dets) {
    d.class_id = 0;
    img.detections.push_back(d);
  }
  for (const auto& g : gts) img.ground_truth.push_back(Annotation{g, 0, false});
  return evaluate_class(std::span<const ImageResult>(&img, 1), 0, iou_threshold, 0.0, interp).ap;
}

double mean_average_precision(const std::map<int, double>& per_class) {
  if (per_class.empty()) throw std::invalid_argument("mean_average_precision: no classes");
  double sum = 0.0;
  for (const auto& [cls, ap] : per_class) sum += ap;
  return sum / static_cast<double>(per_class.size());
}

PrecisionRecallF1 precision_recall_f1(std::span<const Detection> dets, std::span<const Box> gts,
                                      double iou_threshold, double score_threshold) {
  std::vector<Detection> kept;
  for (auto d : dets) {
    if (d.score >= score_threshold) {
      d.class_id = 0;
      kept.push_back(d);
    }
  }
  std::vector<Annotation> truth;
  for (const auto& g : gts) truth.push_back(Annotation{g, 0, false});
  const auto outcomes = match_detections(kept, truth, iou_threshold);
  PrecisionRecallF1 out;
  out.tp = static_cast<std::size_t>(std::count(outcomes.begin(), outcomes.end(), MatchOutcome::kTruePositive));
  out.fp = static_cast<std::size_t>(std::count(outcomes.begin(), outcomes.end(), MatchOutcome::kFalsePositive));
  out.fn = truth.size() - out.tp;
  out.precision = safe_div(static_cast<double>(out.tp), static_cast<double>(out.tp + out.fp));
  out.recall = safe_div(static_cast<double>(out.tp), static_cast<double>(out.tp + out.fn));
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

EvalResult evaluate(std::span<const ImageResult> images, const std::vector<std::string>& class_names,
                    double iou_threshold, double score_threshold, Interpolation interp) {
  EvalResult res;
  res.class_names = class_names;
  res.iou_threshold = iou_threshold;
  res.score_threshold = score_threshold;
  res.interpolation = interp;
  std::map<int, double> aps;
  for (int c = 0; c < static_cast<int>(class_names.size()); ++c) {
    ClassEval ev = evaluate_class(images, c, iou_threshold, score_threshold, interp);
    if (ev.num_gt == 0) continue;
    aps[c] = ev.ap;
    res.tp += ev.tp;
    res.fp += ev.fp;
    res.fn += ev.fn;
    res.per_class.emplace(c, std::move(ev));
  }
  res.map = aps.empty() ? 0.0 : mean_average_precision(aps);
  return res;
}

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& [c, ev] : r.per_class) {
    classes.push_back({{"class", r.class_names.at(static_cast<std::size_t>(c))},
                       {"ap", ev.ap},
                       {"num_gt", ev.num_gt},
                       {"tp", ev.tp},
                       {"fp", ev.fp},
                       {"fn", ev.fn},
                       {"precision", ev.precision},
                       {"recall", ev.recall},
                       {"f1", ev.f1}});
  }
  const double p = safe_div(static_cast<double>(r.tp), static_cast<double>(r.tp + r.fp));
  const double rc = safe_div(static_cast<double>(r.tp), static_cast<double>(r.tp + r.fn));
  return {{"map", r.map},
          {"iou_threshold", r.iou_threshold},
          {"score_threshold", r.score_threshold},
          {"interpolation", r.interpolation == Interpolation::kElevenPoint ? "11point" : "allpoint"},
          {"classes", classes},
          {"summary", {{"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"precision", p}, {"recall", rc},
                       {"f1", f1_score(p, rc)}}}};
}

std::string pr_curves_csv(const EvalResult& r) {
  std::ostringstream out;
  out.precision(10);
  out << "class,score,precision,recall\n";
  for (const auto& [c, ev] : r.per_class) {
    for (const auto& p : ev.curve) {
      out << r.class_names.at(static_cast<std::size_t>(c)) << ',' << p.score << ',' << p.precision << ','
          << p.recall << '\n';
    }
  }
  return out.str();
}

}  // namespace sbl
