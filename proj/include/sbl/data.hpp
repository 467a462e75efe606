#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sbl/geometry.hpp"
#include "sbl/image.hpp"

namespace sbl {

struct Annotation {
  Box box;
  int class_id = 0;
  bool difficult = false;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct AnnotatedImage {
  std::string id;
  std::filesystem::path image_path;  // absolute, or empty for in-memory images
  int width = 0;
  int height = 0;
  std::vector<Annotation> objects;
  std::optional<double> complexity;  // synthetic background complexity, when known
  Image pixels;                      // empty until loaded
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<AnnotatedImage> images;

  int class_index(const std::string& name) const;  // -1 when absent
};

enum class AnnotationFormat { kNative, kDotaHbb };

AnnotationFormat parse_annotation_format(const std::string& name);

inline constexpr int kNativeFormatVersion = 1;

/// The fifteen DOTA v1.0 categories, in devkit order.
const std::vector<std::string>& dota_classes();

/// Native: a JSON-lines file (header record + one record per image).
/// DOTA HBB: a directory holding labelTxt/ and images/ (or the label files
/// directly); quadrilaterals are reduced to their axis-aligned hull.
/// Pixel data is not loaded; see load_pixels.
Dataset load_annotations(const std::filesystem::path& path, AnnotationFormat format,
                         const std::vector<std::string>& class_table = dota_classes());

/// Writes the native format. Image paths are stored relative to the
/// annotation file's directory when possible.
void save_annotations(const Dataset& dataset, const std::filesystem::path& path);

/// Reads pixels from image_path (if not already present), records the size,
/// and clips boxes into the image bounds.
void load_pixels(AnnotatedImage& image);

struct ChipSample {
  ImageChip chip;
  std::vector<Annotation> objects;  // chip coordinates
};

/// Fraction of a box's original area that must survive chip clipping.
inline constexpr double kChipKeepFraction = 0.3;

/// Chip offsets along one axis of length `extent`.
std::vector<int> chip_offsets(int extent, int chip_size, int overlap);

std::vector<ChipSample> chip_image(const AnnotatedImage& image, int chip_size, int overlap);

struct SynthConfig {
  int num_images = 200;
  int image_size = 128;
  int min_objects = 1;
  int max_objects = 4;
  int min_object_size = 12;
  int max_object_size = 32;
  // Image i receives complexity_levels[i % size]; each value in [0, 1].
  std::vector<double> complexity_levels{0.1, 0.9};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Names of the synthetic object classes.
const std::vector<std::string>& synthetic_classes();

/// Renders a deterministic synthetic corpus. Pixels are 8-bit quantized so
/// the in-memory dataset equals what a write/read cycle returns.
Dataset synthesize_dataset(const SynthConfig& cfg);

/// Writes images (PPM) plus annotations.jsonl and manifest.json into `dir`.
void write_dataset(Dataset& dataset, const std::filesystem::path& dir);

/// SHA-256 over class table, ids, boxes and pixel bytes, in corpus order.
/// Requires pixels to be loaded.
std::string dataset_fingerprint(const Dataset& dataset);

/// Per-channel pixel variance outside annotated boxes, averaged over channels.
double background_variance(const AnnotatedImage& image);

}  // namespace sbl
