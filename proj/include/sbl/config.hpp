#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbl/data.hpp"
#include "sbl/evaluation.hpp"
#include "sbl/model.hpp"
#include "sbl/salience.hpp"

namespace sbl {

struct DataPaths {
  std::filesystem::path train;
  std::filesystem::path val;
  AnnotationFormat format = AnnotationFormat::kNative;
  int chip_overlap = 32;  // used when source images exceed the detector input
};

struct EvalConfig {
  double iou_threshold = 0.5;
  double score_threshold = 0.05;
  double nms_threshold = 0.3;
  Interpolation interpolation = Interpolation::kElevenPoint;
};

struct RankConfig {
  std::size_t k = 10;
  std::vector<Tap> taps{kAllTaps.begin(), kAllTaps.end()};
};

struct AblateVariant {
  std::string name;
  nlohmann::json train_overrides = nlohmann::json::object();  // merged over the train section
};

struct AblateConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<AblateVariant> variants;
};

/// Everything a command needs, parsed from one JSON file plus overrides.
/// Relative paths resolve against the config file's directory.
struct RunConfig {
  DetectorConfig detector;  // detector.anchors holds the anchor section
  TrainConfig train;
  SynthConfig synth;
  int val_images = 100;
  DataPaths data;
  EvalConfig eval;
  RankConfig rank;
  AblateConfig ablate;
  std::filesystem::path stats_file;
  std::filesystem::path output_dir;
  std::filesystem::path checkpoint;
  std::filesystem::path extractor_weights;
  std::filesystem::path predict_input;
  int checkpoint_every = 0;  // 0: final checkpoint only

  nlohmann::json snapshot;  // merged document, overrides included
};

/// Applies "dotted.key=value". The value is parsed as JSON when possible and
/// taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Parses a merged document. Unknown keys raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// Reads `path` (may be empty for all defaults), applies overrides in order
/// and parses the result.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

}  // namespace sbl
