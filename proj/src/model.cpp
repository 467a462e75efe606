#include "sbl/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "sbl/errors.hpp"
#include "sbl/json_util.hpp"
#include "sbl/tensor_file.hpp"

namespace sbl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

void DetectorConfig::validate() const {
  anchors.validate();
  if (num_classes < 1) throw ConfigError("detector: num_classes must be >= 1");
  if (head_width < 1 || head_depth < 0) throw ConfigError("detector: invalid head shape");
  if (!(prior > 0.0 && prior < 1.0)) throw ConfigError("detector: prior must lie in (0, 1)");
  for (std::size_t l = 0; l < anchors.strides.size(); ++l) {
    const double s = anchors.strides[l];
    const auto is = static_cast<unsigned>(s);
    if (s != static_cast<double>(is) || !std::has_single_bit(is) || is < 2) {
      throw ConfigError("detector: strides must be powers of two >= 2");
    }
    if (l > 0 && s != 2.0 * anchors.strides[l - 1]) {
      throw ConfigError("detector: pyramid strides must double from level to level");
    }
  }
  if (static_cast<int>(backbone_channels.size()) < num_stages()) {
    throw ConfigError("detector: backbone_channels needs " + std::to_string(num_stages()) + " entries");
  }
  if (std::any_of(backbone_channels.begin(), backbone_channels.end(), [](int c) { return c < 1; })) {
    throw ConfigError("detector: backbone channel counts must be positive");
  }
  const auto largest = static_cast<int>(anchors.strides.back());
  if (input_size <= 0 || input_size % largest != 0) {
    throw ConfigError("detector: input_size " + std::to_string(input_size) +
                      " must be divisible by the largest stride " + std::to_string(largest));
  }
}

int DetectorConfig::num_stages() const {
  return std::bit_width(static_cast<unsigned>(anchors.strides.back())) - 1;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (decay_interval < 1) throw ConfigError("train: decay_interval must be >= 1");
  if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
  if (!(new_min > 0.0 && new_min <= new_max)) throw ConfigError("train: need 0 < new_min <= new_max");
  if (!(smooth_l1_beta > 0.0)) throw ConfigError("train: smooth_l1_beta must be > 0");
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be > 0");
  try {
    focal.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

double TrainConfig::learning_rate_at(int step) const {
  double lr = learning_rate;
  for (int k = step / decay_interval; k > 0; --k) lr /= 10.0;
  return lr;
}

// ---------------------------------------------------------------------------
// Gradients

void Gradients::zero() {
  for (auto& g : convs) {
    std::fill(g.weight.begin(), g.weight.end(), 0.0F);
    std::fill(g.bias.begin(), g.bias.end(), 0.0F);
  }
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& g : convs) {
    for (float v : g.weight) s += static_cast<double>(v) * v;
    for (float v : g.bias) s += static_cast<double>(v) * v;
  }
  return s;
}

void Gradients::scale(float factor) {
  for (auto& g : convs) {
    for (float& v : g.weight) v *= factor;
    for (float& v : g.bias) v *= factor;
  }
}

// ---------------------------------------------------------------------------
// Detector

Detector::Detector(DetectorConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  anchors_ = generate_anchors(cfg_.input_size, cfg_.input_size, cfg_.anchors);
  stages_ = static_cast<std::size_t>(cfg_.num_stages());
  levels_ = cfg_.anchors.strides.size();
  for (double s : cfg_.anchors.strides) {
    level_stage_.push_back(static_cast<std::size_t>(std::bit_width(static_cast<unsigned>(s)) - 2));
  }

  std::mt19937_64 rng(seed);
  int in = 3;
  for (std::size_t i = 0; i < stages_; ++i) {
    nn::Conv2d conv({in, cfg_.backbone_channels[i], 3, 2, 1});
    nn::init_he(conv, rng);
    convs_.push_back(std::move(conv));
    names_.push_back("backbone." + std::to_string(i));
    in = cfg_.backbone_channels[i];
  }
  for (std::size_t l = 0; l < levels_; ++l) {
    nn::Conv2d conv({cfg_.backbone_channels[level_stage_[l]], cfg_.head_width, 1, 1, 0});
    nn::init_he(conv, rng);
    convs_.push_back(std::move(conv));
    names_.push_back("lateral." + std::to_string(l));
  }
  const int per_loc = static_cast<int>(anchors_.per_location);
  const auto prior_bias = static_cast<float>(-std::log((1.0 - cfg_.prior) / cfg_.prior));
  for (const char* head : {"cls", "box"}) {
    for (int d = 0; d < cfg_.head_depth; ++d) {
      nn::Conv2d conv({cfg_.head_width, cfg_.head_width, 3, 1, 1});
      nn::init_he(conv, rng);
      convs_.push_back(std::move(conv));
      names_.push_back(std::string(head) + "_head." + std::to_string(d));
    }
    const bool is_cls = std::string(head) == "cls";
    nn::Conv2d out({cfg_.head_width, per_loc * (is_cls ? cfg_.num_classes : 4), 3, 1, 1});
    nn::init_normal(out, rng, 0.01, is_cls ? prior_bias : 0.0F);
    convs_.push_back(std::move(out));
    names_.push_back(std::string(head) + "_out");
  }
}

std::size_t Detector::parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : convs_) n += c.weight.size() + c.bias.size();
  return n;
}

std::vector<std::size_t> Detector::backbone_indices() const {
  std::vector<std::size_t> idx(stages_);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::vector<std::size_t> Detector::class_head_indices() const {
  std::vector<std::size_t> idx;
  for (int d = 0; d <= cfg_.head_depth; ++d) idx.push_back(cls_layer(d));
  return idx;
}

std::vector<std::size_t> Detector::box_head_indices() const {
  std::vector<std::size_t> idx;
  for (int d = 0; d <= cfg_.head_depth; ++d) idx.push_back(box_layer(d));
  return idx;
}

Gradients Detector::make_gradients() const {
  Gradients g;
  for (const auto& c : convs_) g.convs.emplace_back(c);
  return g;
}

void Detector::check_input(const Image& image) const {
  if (image.width != cfg_.input_size || image.height != cfg_.input_size) {
    throw std::invalid_argument("detector expects " + std::to_string(cfg_.input_size) + "x" +
                                std::to_string(cfg_.input_size) + " input, got " +
                                std::to_string(image.width) + "x" + std::to_string(image.height));
  }
}

void Detector::gather(std::size_t level, const nn::Tensor& cls, const nn::Tensor& box, DetectorOutput& out) const {
  const AnchorLevel& lv = anchors_.levels[level];
  const std::size_t per_loc = anchors_.per_location;
  const auto k_count = static_cast<std::size_t>(cfg_.num_classes);
  for (int row = 0; row < lv.grid_h; ++row) {
    for (int col = 0; col < lv.grid_w; ++col) {
      const std::size_t cell = static_cast<std::size_t>(row) * lv.grid_w + col;
      for (std::size_t a = 0; a < per_loc; ++a) {
        const std::size_t anchor = lv.offset + cell * per_loc + a;
        for (std::size_t k = 0; k < k_count; ++k) {
          out.class_logits[anchor * k_count + k] = cls.at(static_cast<int>(a * k_count + k), row, col);
        }
        const int base = static_cast<int>(a * 4);
        out.boxes[anchor] = BoxDelta{box.at(base, row, col), box.at(base + 1, row, col),
                                     box.at(base + 2, row, col), box.at(base + 3, row, col)};
      }
    }
  }
}

void Detector::scatter(std::size_t level, std::span<const float> grad_logits, std::span<const BoxDelta> grad_boxes,
                       nn::Tensor& gcls, nn::Tensor& gbox) const {
  const AnchorLevel& lv = anchors_.levels[level];
  const std::size_t per_loc = anchors_.per_location;
  const auto k_count = static_cast<std::size_t>(cfg_.num_classes);
  gcls = nn::Tensor(static_cast<int>(per_loc * k_count), lv.grid_h, lv.grid_w);
  gbox = nn::Tensor(static_cast<int>(per_loc * 4), lv.grid_h, lv.grid_w);
  for (int row = 0; row < lv.grid_h; ++row) {
    for (int col = 0; col < lv.grid_w; ++col) {
      const std::size_t cell = static_cast<std::size_t>(row) * lv.grid_w + col;
      for (std::size_t a = 0; a < per_loc; ++a) {
        const std::size_t anchor = lv.offset + cell * per_loc + a;
        for (std::size_t k = 0; k < k_count; ++k) {
          gcls.at(static_cast<int>(a * k_count + k), row, col) = grad_logits[anchor * k_count + k];
        }
        const BoxDelta& g = grad_boxes[anchor];
        const int base = static_cast<int>(a * 4);
        gbox.at(base, row, col) = static_cast<float>(g.tx);
        gbox.at(base + 1, row, col) = static_cast<float>(g.ty);
        gbox.at(base + 2, row, col) = static_cast<float>(g.tw);
        gbox.at(base + 3, row, col) = static_cast<float>(g.th);
      }
    }
  }
}

DetectorOutput Detector::forward(const Image& image) const {
  ForwardTrace scratch;
  return forward(image, scratch);
}

DetectorOutput Detector::forward(const Image& image, ForwardTrace& tr) const {
  check_input(image);
  tr = ForwardTrace{};
  tr.backbone_cache.resize(stages_);
  tr.backbone_out.resize(stages_);
  tr.lateral_cache.resize(levels_);
  tr.pyramid_dims.resize(levels_);
  tr.cls.resize(levels_);
  tr.box.resize(levels_);

  nn::Tensor x = to_tensor(image);
  for (std::size_t i = 0; i < stages_; ++i) {
    x = nn::conv_forward(convs_[i], x, &tr.backbone_cache[i]);
    nn::relu_inplace(x);
    tr.backbone_out[i] = x;
  }

  std::vector<nn::Tensor> pyramid(levels_);
  for (std::size_t l = levels_; l-- > 0;) {
    pyramid[l] = nn::conv_forward(convs_[lateral(l)], tr.backbone_out[level_stage_[l]], &tr.lateral_cache[l]);
    if (l + 1 < levels_) {
      nn::add_inplace(pyramid[l], nn::upsample2x(pyramid[l + 1], pyramid[l].height, pyramid[l].width));
    }
    tr.pyramid_dims[l] = {pyramid[l].height, pyramid[l].width};
  }

  DetectorOutput out;
  out.class_logits.assign(anchors_.size() * static_cast<std::size_t>(cfg_.num_classes), 0.0F);
  out.boxes.assign(anchors_.size(), BoxDelta{});
  const auto run_head = [&](ForwardTrace::Head& head, const nn::Tensor& input, auto layer_of) {
    head.cache.resize(static_cast<std::size_t>(cfg_.head_depth) + 1);
    head.hidden.resize(static_cast<std::size_t>(cfg_.head_depth));
    nn::Tensor h = input;
    for (int d = 0; d < cfg_.head_depth; ++d) {
      h = nn::conv_forward(convs_[layer_of(d)], h, &head.cache[static_cast<std::size_t>(d)]);
      nn::relu_inplace(h);
      head.hidden[static_cast<std::size_t>(d)] = h;
    }
    return nn::conv_forward(convs_[layer_of(cfg_.head_depth)], h,
                            &head.cache[static_cast<std::size_t>(cfg_.head_depth)]);
  };
  for (std::size_t l = 0; l < levels_; ++l) {
    const nn::Tensor cls = run_head(tr.cls[l], pyramid[l], [this](int d) { return cls_layer(d); });
    const nn::Tensor box = run_head(tr.box[l], pyramid[l], [this](int d) { return box_layer(d); });
    gather(l, cls, box, out);
  }
  return out;
}

void Detector::backward(const ForwardTrace& tr, std::span<const float> grad_logits,
                        std::span<const BoxDelta> grad_boxes, Gradients& grads) const {
  if (grad_logits.size() != anchors_.size() * static_cast<std::size_t>(cfg_.num_classes) ||
      grad_boxes.size() != anchors_.size()) {
    throw std::invalid_argument("Detector::backward: gradient arrays not aligned with anchors");
  }
  const auto head_backward = [&](const ForwardTrace::Head& head, const nn::Tensor& grad_out, auto layer_of) {
    const auto depth = static_cast<std::size_t>(cfg_.head_depth);
    nn::Tensor g = nn::conv_backward(convs_[layer_of(cfg_.head_depth)], head.cache[depth], grad_out,
                                     grads.convs[layer_of(cfg_.head_depth)]);
    for (std::size_t d = depth; d-- > 0;) {
      nn::relu_backward_inplace(g, head.hidden[d]);
      g = nn::conv_backward(convs_[layer_of(static_cast<int>(d))], head.cache[d], g,
                            grads.convs[layer_of(static_cast<int>(d))]);
    }
    return g;
  };

  std::vector<nn::Tensor> d_pyramid(levels_);
  for (std::size_t l = 0; l < levels_; ++l) {
    nn::Tensor gcls;
    nn::Tensor gbox;
    scatter(l, grad_logits, grad_boxes, gcls, gbox);
    d_pyramid[l] = head_backward(tr.cls[l], gcls, [this](int d) { return cls_layer(d); });
    nn::add_inplace(d_pyramid[l], head_backward(tr.box[l], gbox, [this](int d) { return box_layer(d); }));
  }

  std::vector<nn::Tensor> d_stage(stages_);
  for (std::size_t l = 0; l < levels_; ++l) {
    if (l + 1 < levels_) {
      const auto [h, w] = tr.pyramid_dims[l + 1];
      nn::add_inplace(d_pyramid[l + 1], nn::upsample2x_backward(d_pyramid[l], h, w));
    }
    nn::Tensor g = nn::conv_backward(convs_[lateral(l)], tr.lateral_cache[l], d_pyramid[l], grads.convs[lateral(l)]);
    nn::Tensor& dst = d_stage[level_stage_[l]];
    if (dst.data.empty()) {
      dst = std::move(g);
    } else {
      nn::add_inplace(dst, g);
    }
  }

  nn::Tensor g;
  for (std::size_t i = stages_; i-- > 0;) {
    if (!d_stage[i].data.empty()) {
      if (g.data.empty()) {
        g = std::move(d_stage[i]);
      } else {
        nn::add_inplace(g, d_stage[i]);
      }
    }
    if (g.data.empty()) continue;
    nn::relu_backward_inplace(g, tr.backbone_out[i]);
    g = nn::conv_backward(convs_[i], tr.backbone_cache[i], g, grads.convs[i], i > 0);
  }
}

// ---------------------------------------------------------------------------
// Inference

std::vector<Detection> predict(const Detector& detector, const Image& image, double score_threshold,
                               double nms_threshold, std::size_t max_candidates) {
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw std::invalid_argument("predict: score_threshold must lie in [0, 1]");
  }
  if (!(nms_threshold >= 0.0 && nms_threshold <= 1.0)) {
    throw std::invalid_argument("predict: nms_threshold must lie in [0, 1]");
  }
  const DetectorOutput out = detector.forward(image);
  const auto k_count = static_cast<std::size_t>(detector.config().num_classes);
  const AnchorSet& anchors = detector.anchors();

  struct Candidate {
    double score;
    std::size_t anchor;
    int cls;
  };
  std::vector<Candidate> cands;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t k = 0; k < k_count; ++k) {
      const double p = std::min(out.probability(a, k, k_count), 1.0 - kProbEpsilon);
      if (p >= score_threshold) cands.push_back({p, a, static_cast<int>(k)});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) { return x.score > y.score; });
  if (cands.size() > max_candidates) cands.resize(max_candidates);

  const Extent extent{static_cast<double>(image.width), static_cast<double>(image.height)};
  std::vector<Detection> dets;
  dets.reserve(cands.size());
  for (const auto& c : cands) {
    BoxDelta d = out.boxes[c.anchor];
    // Guard exp() against wild early-training regressions.
    d.tw = std::clamp(d.tw, -8.0, 8.0);
    d.th = std::clamp(d.th, -8.0, 8.0);
    const Box box = decode_deltas(anchors.boxes[c.anchor], d, extent);
    if (box.area() <= 0.0) continue;
    dets.push_back(Detection{box, c.score, c.cls});
  }
  return nms(dets, nms_threshold);
}

// ---------------------------------------------------------------------------
// Training

std::vector<TrainSample> prepare_samples(const Detector& detector, const Dataset& dataset) {
  const auto& cfg = detector.config();
  std::vector<TrainSample> samples;
  samples.reserve(dataset.images.size());
  for (const auto& img : dataset.images) {
    if (img.pixels.width != cfg.input_size || img.pixels.height != cfg.input_size) {
      throw DataError("training image '" + img.id + "' is not " + std::to_string(cfg.input_size) +
                      " pixels square; chip it first");
    }
    std::vector<GroundTruth> gts;
    for (const auto& o : img.objects) {
      if (o.class_id >= cfg.num_classes) {
        throw DataError("image '" + img.id + "': class id " + std::to_string(o.class_id) +
                        " exceeds detector num_classes");
      }
      if (o.box.width() > 0.0 && o.box.height() > 0.0) gts.push_back(GroundTruth{o.box, o.class_id});
    }
    TrainSample s;
    s.id = img.id;
    s.image = &img.pixels;
    s.assignment = assign_targets(detector.anchors(), gts, cfg.anchors.pos_threshold, cfg.anchors.neg_threshold);
    samples.push_back(std::move(s));
  }
  return samples;
}

Trainer::Trainer(Detector& detector, TrainConfig cfg, const FrozenExtractor* extractor,
                 const SalienceStats* stats)
    : detector_(detector), cfg_(std::move(cfg)), extractor_(extractor),
      m_(detector.make_gradients()), v_(detector.make_gradients()) {
  cfg_.validate();
  if (cfg_.sbl_enabled) {
    if (!extractor_ || !stats) {
      throw std::invalid_argument("Trainer: salience biased training needs an extractor and stats");
    }
    if (stats->extractor_fingerprint != extractor_->fingerprint()) {
      throw StaleStatsError("salience stats were computed with a different extractor");
    }
    stats_ = *stats;
    stats_.range(cfg_.tap);
    stats_.new_min = cfg_.new_min;
    stats_.new_max = cfg_.new_max;
  }
}

void Trainer::restore(int step, Gradients m, Gradients v) {
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

LossBreakdown Trainer::weight_for(TrainSample& sample) {
  LossBreakdown b;
  if (!cfg_.sbl_enabled) {
    b.weight = 1.0;
    return b;
  }
  if (!sample.raw_salience) sample.raw_salience = estimate_salience(*sample.image, *extractor_, cfg_.tap);
  b.raw_salience = *sample.raw_salience;
  b.weight = cfg_.normalize ? normalize_salience(b.raw_salience, stats_, cfg_.tap) : b.raw_salience;
  return b;
}

StepRecord Trainer::train_step(std::span<TrainSample* const> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const auto k_count = static_cast<std::size_t>(detector_.config().num_classes);
  const auto inv_batch = static_cast<float>(1.0 / static_cast<double>(batch.size()));

  StepRecord rec;
  rec.step = step_;
  rec.learning_rate = cfg_.learning_rate_at(step_);
  Gradients grads = detector_.make_gradients();
  for (TrainSample* sample : batch) {
    const LossBreakdown w = weight_for(*sample);
    ForwardTrace trace;
    const DetectorOutput out = detector_.forward(*sample->image, trace);
    std::vector<float> g_logits(out.class_logits.size());
    std::vector<BoxDelta> g_boxes(out.boxes.size());
    LossBreakdown lb = total_loss_with_grad(sample->assignment, out.class_logits, out.boxes, k_count, w.weight,
                                            cfg_.focal, cfg_.smooth_l1_beta, g_logits, g_boxes);
    lb.raw_salience = w.raw_salience;
    for (float& g : g_logits) g *= inv_batch;
    for (BoxDelta& g : g_boxes) {
      g.tx *= inv_batch;
      g.ty *= inv_batch;
      g.tw *= inv_batch;
      g.th *= inv_batch;
    }
    detector_.backward(trace, g_logits, g_boxes, grads);
    rec.batch_loss += lb.total / static_cast<double>(batch.size());
    rec.image_ids.push_back(sample->id);
    rec.images.push_back(lb);
  }

  rec.grad_norm = std::sqrt(grads.squared_norm());
  if (rec.grad_norm > cfg_.clip_norm) grads.scale(static_cast<float>(cfg_.clip_norm / rec.grad_norm));

  const double t = step_ + 1;
  const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t);
  const auto b1 = static_cast<float>(cfg_.adam_beta1);
  const auto b2 = static_cast<float>(cfg_.adam_beta2);
  const auto step_size = static_cast<float>(rec.learning_rate / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(cfg_.adam_epsilon);
  auto update = [&](std::vector<float>& p, const std::vector<float>& g, std::vector<float>& m, std::vector<float>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0F - b1) * g[i];
      v[i] = b2 * v[i] + (1.0F - b2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  };
  auto& params = detector_.parameters();
  for (std::size_t c = 0; c < params.size(); ++c) {
    update(params[c].weight, grads.convs[c].weight, m_.convs[c].weight, v_.convs[c].weight);
    update(params[c].bias, grads.convs[c].bias, m_.convs[c].bias, v_.convs[c].bias);
  }
  ++step_;
  return rec;
}

void fit(Trainer& trainer, std::vector<TrainSample>& samples, const std::function<void(const StepRecord&)>& on_step) {
  if (samples.empty()) throw DataError("fit: no training samples");
  const TrainConfig& cfg = trainer.config();
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::vector<TrainSample*> batch;
  while (trainer.step() < cfg.iterations) {
    batch.clear();
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&samples[order[cursor++]]);
    }
    const StepRecord rec = trainer.train_step(batch);
    if (on_step) on_step(rec);
  }
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json anchors_to_json(const AnchorConfig& a) {
  return {{"aspect_ratios", a.aspect_ratios}, {"scale_multipliers", a.scale_multipliers},
          {"base_sizes", a.base_sizes},       {"strides", a.strides},
          {"pos_threshold", a.pos_threshold}, {"neg_threshold", a.neg_threshold}};
}

AnchorConfig anchors_from_json(const json& j) {
  reject_unknown_keys(j, {"aspect_ratios", "scale_multipliers", "base_sizes", "strides", "pos_threshold",
                          "neg_threshold"}, "anchors");
  AnchorConfig a;
  read_optional(j, "aspect_ratios", a.aspect_ratios, "anchors");
  read_optional(j, "scale_multipliers", a.scale_multipliers, "anchors");
  read_optional(j, "base_sizes", a.base_sizes, "anchors");
  read_optional(j, "strides", a.strides, "anchors");
  read_optional(j, "pos_threshold", a.pos_threshold, "anchors");
  read_optional(j, "neg_threshold", a.neg_threshold, "anchors");
  return a;
}

}  // namespace

json to_json(const DetectorConfig& c) {
  return {{"input_size", c.input_size}, {"num_classes", c.num_classes},
          {"backbone_channels", c.backbone_channels}, {"head_width", c.head_width},
          {"head_depth", c.head_depth}, {"prior", c.prior}, {"anchors", anchors_to_json(c.anchors)}};
}

DetectorConfig detector_config_from_json(const json& j) {
  reject_unknown_keys(j, {"input_size", "num_classes", "backbone_channels", "head_width", "head_depth", "prior",
                          "anchors"}, "detector");
  DetectorConfig c;
  read_optional(j, "input_size", c.input_size, "detector");
  read_optional(j, "num_classes", c.num_classes, "detector");
  read_optional(j, "backbone_channels", c.backbone_channels, "detector");
  read_optional(j, "head_width", c.head_width, "detector");
  read_optional(j, "head_depth", c.head_depth, "detector");
  read_optional(j, "prior", c.prior, "detector");
  if (j.contains("anchors")) c.anchors = anchors_from_json(j.at("anchors"));
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"decay_interval", c.decay_interval},
          {"iterations", c.iterations},       {"batch_size", c.batch_size},
          {"seed", c.seed},                   {"tap", tap_name(c.tap)},
          {"new_min", c.new_min},             {"new_max", c.new_max},
          {"sbl_enabled", c.sbl_enabled},     {"normalize", c.normalize},
          {"alpha", c.focal.alpha},           {"gamma", c.focal.gamma},
          {"smooth_l1_beta", c.smooth_l1_beta}, {"clip_norm", c.clip_norm},
          {"adam_beta1", c.adam_beta1},       {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon}};
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown_keys(j, {"learning_rate", "decay_interval", "iterations", "batch_size", "seed", "tap", "new_min",
                          "new_max", "sbl_enabled", "normalize", "alpha", "gamma", "smooth_l1_beta", "clip_norm",
                          "adam_beta1", "adam_beta2", "adam_epsilon"}, "train");
  TrainConfig c;
  read_optional(j, "learning_rate", c.learning_rate, "train");
  read_optional(j, "decay_interval", c.decay_interval, "train");
  read_optional(j, "iterations", c.iterations, "train");
  read_optional(j, "batch_size", c.batch_size, "train");
  read_optional(j, "seed", c.seed, "train");
  std::string tap = tap_name(c.tap);
  read_optional(j, "tap", tap, "train");
  try {
    c.tap = parse_tap(tap);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train.tap: ") + e.what());
  }
  read_optional(j, "new_min", c.new_min, "train");
  read_optional(j, "new_max", c.new_max, "train");
  read_optional(j, "sbl_enabled", c.sbl_enabled, "train");
  read_optional(j, "normalize", c.normalize, "train");
  read_optional(j, "alpha", c.focal.alpha, "train");
  read_optional(j, "gamma", c.focal.gamma, "train");
  read_optional(j, "smooth_l1_beta", c.smooth_l1_beta, "train");
  read_optional(j, "clip_norm", c.clip_norm, "train");
  read_optional(j, "adam_beta1", c.adam_beta1, "train");
  read_optional(j, "adam_beta2", c.adam_beta2, "train");
  read_optional(j, "adam_epsilon", c.adam_epsilon, "train");
  return c;
}

json to_json(const LossBreakdown& b) {
  return {{"raw_salience", b.raw_salience}, {"weight", b.weight}, {"focal_sum", b.focal_sum},
          {"l1_sum", b.l1_sum},             {"num_pos", b.num_pos}, {"total", b.total}};
}

void save_checkpoint(const std::filesystem::path& path, const Detector& detector, const Trainer* trainer,
                     const CheckpointInfo& info) {
  TensorFile file;
  file.meta = {{"kind", "sbl-detector-checkpoint"},
               {"checkpoint_version", kCheckpointVersion},
               {"step", info.step},
               {"detector_config", to_json(detector.config())},
               {"extra", info.extra}};
  if (trainer) file.meta["train_config"] = to_json(trainer->config());
  const auto& params = detector.parameters();
  const auto& names = detector.parameter_names();
  auto push = [&](const std::string& prefix, const std::vector<nn::Conv2d>& convs) {
    for (std::size_t i = 0; i < convs.size(); ++i) {
      const auto& s = params[i].spec;
      file.tensors.push_back({prefix + names[i] + ".weight", {s.out_channels, s.in_channels, s.kernel, s.kernel},
                              convs[i].weight});
      file.tensors.push_back({prefix + names[i] + ".bias", {s.out_channels}, convs[i].bias});
    }
  };
  push("", params);
  if (trainer) {
    auto as_convs = [&](const Gradients& g) {
      std::vector<nn::Conv2d> out = params;
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].weight = g.convs[i].weight;
        out[i].bias = g.convs[i].bias;
      }
      return out;
    };
    push("adam_m/", as_convs(trainer->first_moment()));
    push("adam_v/", as_convs(trainer->second_moment()));
  }
  write_tensor_file(file, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  if (file.meta.value("kind", "") != "sbl-detector-checkpoint") {
    throw DataError(path.string() + ": not a detector checkpoint");
  }
  if (file.meta.value("checkpoint_version", 0) != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version");
  }
  LoadedCheckpoint out{Detector(detector_config_from_json(file.meta.at("detector_config")), 0), TrainConfig{},
                       file.meta.value("step", 0), file.meta.value("extra", json::object()), std::nullopt,
                       std::nullopt};
  if (file.meta.contains("train_config")) out.train_config = train_config_from_json(file.meta.at("train_config"));
  auto& params = out.detector.parameters();
  const auto& names = out.detector.parameter_names();
  auto fetch = [&](const std::string& name, std::size_t expected) -> const std::vector<float>& {
    const NamedTensor& t = file.get(name);
    if (t.data.size() != expected) throw DataError(path.string() + ": size mismatch for " + name);
    return t.data;
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].weight = fetch(names[i] + ".weight", params[i].weight.size());
    params[i].bias = fetch(names[i] + ".bias", params[i].bias.size());
  }
  const bool has_adam = std::any_of(file.tensors.begin(), file.tensors.end(),
                                    [](const NamedTensor& t) { return t.name.rfind("adam_m/", 0) == 0; });
  if (has_adam) {
    Gradients m = out.detector.make_gradients();
    Gradients v = out.detector.make_gradients();
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.convs[i].weight = fetch("adam_m/" + names[i] + ".weight", params[i].weight.size());
      m.convs[i].bias = fetch("adam_m/" + names[i] + ".bias", params[i].bias.size());
      v.convs[i].weight = fetch("adam_v/" + names[i] + ".weight", params[i].weight.size());
      v.convs[i].bias = fetch("adam_v/" + names[i] + ".bias", params[i].bias.size());
    }
    out.adam_m = std::move(m);
    out.adam_v = std::move(v);
  }
  return out;
}

}  // namespace sbl
