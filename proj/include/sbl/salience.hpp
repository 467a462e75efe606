#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sbl/data.hpp"
#include "sbl/image.hpp"
#include "sbl/nn.hpp"

namespace sbl {

/// Extractor stage whose output feeds the salience estimate.
enum class Tap { kC2 = 0, kC3 = 1, kC4 = 2, kC5 = 3 };

inline constexpr std::array<Tap, 4> kAllTaps{Tap::kC2, Tap::kC3, Tap::kC4, Tap::kC5};

std::string tap_name(Tap tap);
/// Throws std::invalid_argument for anything other than C2..C5.
Tap parse_tap(const std::string& name);

struct FeatureMap {
  nn::Tensor values;
  Tap tap = Tap::kC2;
};

/// Frozen image -> (C2, C3, C4, C5) feature function. Implementations must
/// be deterministic and must never mutate their parameters.
class FrozenExtractor {
 public:
  virtual ~FrozenExtractor() = default;
  virtual std::array<FeatureMap, 4> extract(const Image& image) const = 0;
  virtual FeatureMap extract(const Image& image, Tap tap) const;
  /// Hash over every parameter; identical before and after training.
  virtual std::string fingerprint() const = 0;
};

/// Four stride-2 rectified 3x3 convolutions. Input is the raw [0, 1] RGB
/// chip with no further normalization. Borders are edge-replicated and every
/// filter slice is zero-sum, so a flat image produces an all-zero response at
/// every stage.
class ConvStackExtractor final : public FrozenExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5A11E4CEULL;
  static constexpr std::array<int, 4> kChannels{8, 16, 32, 64};

  explicit ConvStackExtractor(std::uint64_t seed = kDefaultSeed);

  /// Adapter for externally trained weights, stored in the same tensor
  /// container format as detector checkpoints.
  static ConvStackExtractor from_file(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  using FrozenExtractor::extract;
  std::array<FeatureMap, 4> extract(const Image& image) const override;
  FeatureMap extract(const Image& image, Tap tap) const override;
  std::string fingerprint() const override;

 private:
  ConvStackExtractor(std::array<nn::Conv2d, 4> stages, int);
  std::array<nn::Conv2d, 4> stages_;
};

/// Plain mean over every entry of the map.
double mean_activation(const FeatureMap& map);

/// Raw salience S of `image` at `tap`. Increments salience_call_count().
double estimate_salience(const Image& image, const FrozenExtractor& extractor, Tap tap);

/// Number of estimate_salience calls made by this process.
std::uint64_t salience_call_count();

struct TapRange {
  double min = 0.0;
  double max = 0.0;

  bool operator==(const TapRange&) const = default;
};

struct SalienceStats {
  std::map<Tap, TapRange> taps;
  double new_min = 0.5;
  double new_max = 1.0;
  std::string corpus_hash;
  std::string extractor_fingerprint;
  std::string created_at;

  void validate() const;
  const TapRange& range(Tap tap) const;
};

inline constexpr int kStatsFormatVersion = 1;

/// Per-tap extrema of raw salience over every image (pixels must be loaded).
SalienceStats compute_stats(const Dataset& corpus, const FrozenExtractor& extractor,
                            const std::vector<Tap>& taps, double new_min = 0.5,
                            double new_max = 1.0);

/// Min-max maps [min, max] linearly onto [new_min, new_max], clamping
/// outside values. A degenerate range (min == max) yields new_max.
double normalize_salience(double raw, const SalienceStats& stats, Tap tap);

void save_stats(const SalienceStats& stats, const std::filesystem::path& path);
SalienceStats load_stats(const std::filesystem::path& path);

/// Throws StaleStatsError when the stats were computed for a different
/// corpus or extractor.
void ensure_fresh(const SalienceStats& stats, const std::string& corpus_hash,
                  const std::string& extractor_fingerprint);

struct RankEntry {
  std::string image_id;
  double raw = 0.0;
  double normalized = 0.0;
};

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

inline constexpr int kHistogramBins = 50;

struct Ranking {
  Tap tap = Tap::kC2;
  std::vector<RankEntry> sorted;  // descending raw salience, ties by corpus order
  std::vector<RankEntry> top;     // largest first
  std::vector<RankEntry> bottom;  // smallest first
  Histogram histogram;
  bool saturated = false;  // k exceeded the corpus size
};

Histogram make_histogram(const std::vector<double>& values, double lo, double hi,
                         int bins = kHistogramBins);

/// Ranks precomputed scores. `stats` (optional) supplies normalized values
/// and the histogram range; otherwise the observed range is used.
Ranking rank_scores(std::vector<RankEntry> entries, Tap tap, std::size_t k,
                    const SalienceStats* stats = nullptr);

Ranking rank_images(const Dataset& corpus, const FrozenExtractor& extractor, Tap tap,
                    std::size_t k, const SalienceStats* stats = nullptr);

}  // namespace sbl
