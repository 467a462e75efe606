#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbl/anchors.hpp"
#include "sbl/image.hpp"
#include "sbl/losses.hpp"
#include "sbl/nn.hpp"
#include "sbl/salience.hpp"

namespace sbl {

struct DetectorConfig {
  int input_size = 512;
  int num_classes = 3;
  std::vector<int> backbone_channels{16, 32, 64, 64};  // one per stride-2 stage
  int head_width = 32;
  int head_depth = 1;  // hidden 3x3 convs per sub-network before the output conv
  double prior = 0.01;
  AnchorConfig anchors;

  void validate() const;
  int num_stages() const;  // log2 of the largest stride
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int decay_interval = 800;  // lr divided by 10 every decay_interval steps
  int iterations = 2000;
  int batch_size = 2;
  std::uint64_t seed = 0;
  Tap tap = Tap::kC2;
  double new_min = 0.5;
  double new_max = 1.0;
  bool sbl_enabled = true;
  bool normalize = true;  // false: weight images by raw salience
  FocalConfig focal;
  double smooth_l1_beta = 1.0;
  double clip_norm = 10.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
  double learning_rate_at(int step) const;
};

/// Raw head outputs in AnchorSet order: class_logits[a * K + k], boxes[a].
struct DetectorOutput {
  std::vector<float> class_logits;
  std::vector<BoxDelta> boxes;

  double probability(std::size_t anchor, std::size_t cls, std::size_t num_classes) const {
    return sigmoid(class_logits[anchor * num_classes + cls]);
  }
};

/// Activations retained by a training forward pass.
struct ForwardTrace {
  std::vector<nn::ConvCache> backbone_cache;
  std::vector<nn::Tensor> backbone_out;
  std::vector<nn::ConvCache> lateral_cache;
  std::vector<std::pair<int, int>> pyramid_dims;
  struct Head {
    std::vector<nn::ConvCache> cache;  // head_depth hidden + output
    std::vector<nn::Tensor> hidden;    // post-ReLU
  };
  std::vector<Head> cls;
  std::vector<Head> box;
};

struct Gradients {
  std::vector<nn::ConvGrad> convs;
  void zero();
  double squared_norm() const;
  void scale(float factor);
};

/// Small one-stage detector: strided conv backbone, top-down feature
/// pyramid over the configured strides, and class/box sub-networks shared
/// across pyramid levels.
class Detector {
 public:
  Detector(DetectorConfig cfg, std::uint64_t seed);

  const DetectorConfig& config() const { return cfg_; }
  const AnchorSet& anchors() const { return anchors_; }

  DetectorOutput forward(const Image& image) const;
  DetectorOutput forward(const Image& image, ForwardTrace& trace) const;
  void backward(const ForwardTrace& trace, std::span<const float> grad_logits,
                std::span<const BoxDelta> grad_boxes, Gradients& grads) const;

  Gradients make_gradients() const;

  std::vector<nn::Conv2d>& parameters() { return convs_; }
  const std::vector<nn::Conv2d>& parameters() const { return convs_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t parameter_count() const;

  /// Indices into parameters() grouped by role.
  std::vector<std::size_t> backbone_indices() const;
  std::vector<std::size_t> class_head_indices() const;
  std::vector<std::size_t> box_head_indices() const;

 private:
  void check_input(const Image& image) const;
  std::size_t lateral(std::size_t level) const { return stages_ + level; }
  std::size_t cls_layer(int d) const { return stages_ + levels_ + static_cast<std::size_t>(d); }
  std::size_t box_layer(int d) const {
    return stages_ + levels_ + static_cast<std::size_t>(cfg_.head_depth) + 1 + static_cast<std::size_t>(d);
  }
  void gather(std::size_t level, const nn::Tensor& cls, const nn::Tensor& box, DetectorOutput& out) const;
  void scatter(std::size_t level, std::span<const float> grad_logits, std::span<const BoxDelta> grad_boxes,
               nn::Tensor& gcls, nn::Tensor& gbox) const;

  DetectorConfig cfg_;
  AnchorSet anchors_;
  std::size_t stages_ = 0;
  std::size_t levels_ = 0;
  std::vector<std::size_t> level_stage_;
  std::vector<nn::Conv2d> convs_;
  std::vector<std::string> names_;
};

/// Decodes, thresholds, clips to the image and applies per-class NMS.
/// Never touches the salience estimator.
std::vector<Detection> predict(const Detector& detector, const Image& image, double score_threshold,
                               double nms_threshold, std::size_t max_candidates = 2000);

struct TrainSample {
  std::string id;
  const Image* image = nullptr;
  AssignmentMap assignment;
  std::optional<double> raw_salience;  // memoized estimator output
};

/// Assigns anchors for every image. Images must already be at input size.
std::vector<TrainSample> prepare_samples(const Detector& detector, const Dataset& dataset);

struct StepRecord {
  int step = 0;
  double learning_rate = 0.0;
  double batch_loss = 0.0;
  double grad_norm = 0.0;
  std::vector<std::string> image_ids;
  std::vector<LossBreakdown> images;
};

class Trainer {
 public:
  /// `extractor` and `stats` may be null only when SBL is disabled.
  Trainer(Detector& detector, TrainConfig cfg, const FrozenExtractor* extractor,
          const SalienceStats* stats);

  /// One optimizer update on the given batch.
  StepRecord train_step(std::span<TrainSample* const> batch);

  /// Salience weight S' for one image under this trainer's configuration.
  LossBreakdown weight_for(TrainSample& sample);

  int step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  const Detector& detector() const { return detector_; }

  /// Adam moments, parameter-aligned.
  const Gradients& first_moment() const { return m_; }
  const Gradients& second_moment() const { return v_; }
  void restore(int step, Gradients m, Gradients v);

 private:
  Detector& detector_;
  TrainConfig cfg_;
  const FrozenExtractor* extractor_;
  SalienceStats stats_;
  int step_ = 0;
  Gradients m_;
  Gradients v_;
};

/// Runs cfg.iterations steps over shuffled batches (reshuffled every epoch
/// from cfg.seed). The callback sees every step record.
void fit(Trainer& trainer, std::vector<TrainSample>& samples,
         const std::function<void(const StepRecord&)>& on_step = {});

nlohmann::json to_json(const DetectorConfig& cfg);
DetectorConfig detector_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LossBreakdown& b);

inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
  int step = 0;
  nlohmann::json extra = nlohmann::json::object();  // config snapshot, stats reference
};

void save_checkpoint(const std::filesystem::path& path, const Detector& detector,
                     const Trainer* trainer, const CheckpointInfo& info);

struct LoadedCheckpoint {
  Detector detector;
  TrainConfig train_config;
  int step = 0;
  nlohmann::json extra;
  std::optional<Gradients> adam_m;
  std::optional<Gradients> adam_v;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sbl
