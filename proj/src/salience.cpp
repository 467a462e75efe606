#include "sbl/salience.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sbl/errors.hpp"
#include "sbl/hash.hpp"
#include "sbl/tensor_file.hpp"

namespace sbl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<std::uint64_t> g_salience_calls{0};

std::string utc_timestamp() {
  // SOURCE_DATE_EPOCH pins the timestamp for reproducible artifacts.
  std::time_t t = std::time(nullptr);
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end != env && *end == '\0') t = static_cast<std::time_t>(v);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Edge replication keeps the image frame from registering as structure.
nn::Tensor replicate_pad(const nn::Tensor& x, int pad) {
  if (pad == 0) return x;
  nn::Tensor out(x.channels, x.height + 2 * pad, x.width + 2 * pad);
  for (int c = 0; c < x.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      const int sy = std::clamp(y - pad, 0, x.height - 1);
      for (int xx = 0; xx < out.width; ++xx) {
        out.at(c, y, xx) = x.at(c, sy, std::clamp(xx - pad, 0, x.width - 1));
      }
    }
  }
  return out;
}

}  // namespace

std::string tap_name(Tap tap) {
  switch (tap) {
    case Tap::kC2: return "C2";
    case Tap::kC3: return "C3";
    case Tap::kC4: return "C4";
    case Tap::kC5: return "C5";
  }
  throw std::invalid_argument("unknown tap");
}

Tap parse_tap(const std::string& name) {
  for (Tap t : kAllTaps) {
    if (tap_name(t) == name) return t;
  }
  throw std::invalid_argument("unknown tap id '" + name + "' (expected C2, C3, C4 or C5)");
}

FeatureMap FrozenExtractor::extract(const Image& image, Tap tap) const {
  auto maps = extract(image);
  return std::move(maps[static_cast<std::size_t>(tap)]);
}

ConvStackExtractor::ConvStackExtractor(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int in = 3;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    nn::Conv2d conv({in, kChannels[i], 3, 2, 0});
    nn::init_he(conv, rng);
    // Zero-sum every 3x3 slice.
    for (std::size_t s = 0; s < conv.weight.size(); s += 9) {
      const float mean = std::accumulate(conv.weight.begin() + static_cast<std::ptrdiff_t>(s),
                                         conv.weight.begin() + static_cast<std::ptrdiff_t>(s + 9), 0.0F) / 9.0F;
      for (std::size_t j = 0; j < 9; ++j) conv.weight[s + j] -= mean;
    }
    stages_[i] = std::move(conv);
    in = kChannels[i];
  }
}

ConvStackExtractor::ConvStackExtractor(std::array<nn::Conv2d, 4> stages, int) : stages_(std::move(stages)) {}

ConvStackExtractor ConvStackExtractor::from_file(const fs::path& path) {
  const TensorFile file = read_tensor_file(path);
  if (file.meta.value("kind", "") != "conv-stack-extractor") {
    throw DataError(path.string() + ": not a conv-stack extractor weight file");
  }
  std::array<nn::Conv2d, 4> stages;
  int in = 3;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i);
    const NamedTensor& w = file.get(prefix + ".weight");
    const NamedTensor& b = file.get(prefix + ".bias");
    if (w.shape.size() != 4 || w.shape[1] != in || w.shape[2] != w.shape[3] || b.shape.size() != 1 ||
        b.shape[0] != w.shape[0]) {
      throw DataError(path.string() + ": bad shape for " + prefix);
    }
    nn::Conv2d conv({in, w.shape[0], w.shape[2], 2, 0});
    conv.weight = w.data;
    conv.bias = b.data;
    stages[i] = std::move(conv);
    in = w.shape[0];
  }
  return ConvStackExtractor(std::move(stages), 0);
}

void ConvStackExtractor::save(const fs::path& path) const {
  TensorFile file;
  file.meta = {{"kind", "conv-stack-extractor"}};
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const auto& s = stages_[i].spec;
    const std::string prefix = "stage" + std::to_string(i);
    file.tensors.push_back({prefix + ".weight", {s.out_channels, s.in_channels, s.kernel, s.kernel}, stages_[i].weight});
    file.tensors.push_back({prefix + ".bias", {s.out_channels}, stages_[i].bias});
  }
  write_tensor_file(file, path);
}

std::array<FeatureMap, 4> ConvStackExtractor::extract(const Image& image) const {
  std::array<FeatureMap, 4> out;
  nn::Tensor x = to_tensor(image);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    x = nn::conv_forward(stages_[i], replicate_pad(x, stages_[i].spec.kernel / 2));
    nn::relu_inplace(x);
    out[i] = FeatureMap{x, kAllTaps[i]};
  }
  return out;
}

FeatureMap ConvStackExtractor::extract(const Image& image, Tap tap) const {
  nn::Tensor x = to_tensor(image);
  const auto last = static_cast<std::size_t>(tap);
  for (std::size_t i = 0; i <= last; ++i) {
    x = nn::conv_forward(stages_[i], replicate_pad(x, stages_[i].spec.kernel / 2));
    nn::relu_inplace(x);
  }
  return FeatureMap{std::move(x), tap};
}

std::string ConvStackExtractor::fingerprint() const {
  Sha256 h;
  h.update("conv-stack-extractor/v2");
  for (const auto& s : stages_) {
    const int dims[5] = {s.spec.in_channels, s.spec.out_channels, s.spec.kernel, s.spec.stride, s.spec.pad};
    h.update(dims, sizeof(dims));
    h.update(std::span<const float>(s.weight));
    h.update(std::span<const float>(s.bias));
  }
  return h.hex_digest();
}

double mean_activation(const FeatureMap& map) {
  const auto& v = map.values;
  if (v.channels <= 0 || v.height <= 0 || v.width <= 0) {
    throw std::invalid_argument("mean_activation: feature map dimensions must be positive");
  }
  double sum = 0.0;
  for (float x : v.data) {
    if (!std::isfinite(x)) throw std::invalid_argument("mean_activation: non-finite activation");
    sum += x;
  }
  return sum / static_cast<double>(v.data.size());
}

double estimate_salience(const Image& image, const FrozenExtractor& extractor, Tap tap) {
  if (static_cast<int>(tap) < 0 || static_cast<int>(tap) > 3) throw std::invalid_argument("unknown tap id");
  g_salience_calls.fetch_add(1, std::memory_order_relaxed);
  return mean_activation(extractor.extract(image, tap));
}

std::uint64_t salience_call_count() { return g_salience_calls.load(std::memory_order_relaxed); }

void SalienceStats::validate() const {
  for (const auto& [tap, r] : taps) {
    if (!(r.min <= r.max)) throw DataError("salience stats: min > max for tap " + tap_name(tap));
  }
  if (!(new_min > 0.0 && new_max > 0.0 && new_min <= new_max)) {
    throw ConfigError("salience stats: need 0 < new_min <= new_max");
  }
}

const TapRange& SalienceStats::range(Tap tap) const {
  const auto it = taps.find(tap);
  if (it == taps.end()) throw StaleStatsError("salience stats do not contain tap " + tap_name(tap));
  return it->second;
}

SalienceStats compute_stats(const Dataset& corpus, const FrozenExtractor& extractor,
                            const std::vector<Tap>& taps, double new_min, double new_max) {
  if (corpus.images.empty()) throw DataError("compute_stats: empty corpus");
  if (taps.empty()) throw ConfigError("compute_stats: no taps requested");
  SalienceStats stats;
  stats.new_min = new_min;
  stats.new_max = new_max;
  for (const auto& img : corpus.images) {
    if (img.pixels.empty()) throw DataError("compute_stats: pixels of '" + img.id + "' not loaded");
    const auto maps = extractor.extract(img.pixels);
    for (Tap tap : taps) {
      g_salience_calls.fetch_add(1, std::memory_order_relaxed);
      const double s = mean_activation(maps[static_cast<std::size_t>(tap)]);
      auto [it, inserted] = stats.taps.try_emplace(tap, TapRange{s, s});
      if (!inserted) {
        it->second.min = std::min(it->second.min, s);
        it->second.max = std::max(it->second.max, s);
      }
    }
  }
  stats.corpus_hash = dataset_fingerprint(corpus);
  stats.extractor_fingerprint = extractor.fingerprint();
  stats.created_at = utc_timestamp();
  stats.validate();
  return stats;
}

double normalize_salience(double raw, const SalienceStats& stats, Tap tap) {
  const TapRange& r = stats.range(tap);
  if (!(r.max > r.min)) return stats.new_max;
  const double t = std::clamp((raw - r.min) / (r.max - r.min), 0.0, 1.0);
  if (t == 0.0) return stats.new_min;
  if (t == 1.0) return stats.new_max;
  return std::clamp(t * (stats.new_max - stats.new_min) + stats.new_min, stats.new_min, stats.new_max);
}

void save_stats(const SalienceStats& stats, const fs::path& path) {
  json taps = json::array();
  for (const auto& [tap, r] : stats.taps) {
    taps.push_back({{"tap_id", tap_name(tap)}, {"min", r.min}, {"max", r.max}});
  }
  json doc = {{"format", "sbl-salience-stats"},
              {"version", kStatsFormatVersion},
              {"taps", taps},
              {"new_min", stats.new_min},
              {"new_max", stats.new_max},
              {"corpus_hash", stats.corpus_hash},
              {"extractor_fingerprint", stats.extractor_fingerprint},
              {"created_at", stats.created_at}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write stats file " + path.string());
  out << doc.dump(2) << '\n';
}

SalienceStats load_stats(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stats file " + path.string());
  SalienceStats stats;
  try {
    const json doc = json::parse(in);
    if (doc.at("format").get<std::string>() != "sbl-salience-stats" ||
        doc.at("version").get<int>() != kStatsFormatVersion) {
      throw DataError(path.string() + ": not a version-" + std::to_string(kStatsFormatVersion) + " stats file");
    }
    for (const auto& t : doc.at("taps")) {
      stats.taps[parse_tap(t.at("tap_id").get<std::string>())] =
          TapRange{t.at("min").get<double>(), t.at("max").get<double>()};
    }
    stats.new_min = doc.at("new_min").get<double>();
    stats.new_max = doc.at("new_max").get<double>();
    stats.corpus_hash = doc.at("corpus_hash").get<std::string>();
    stats.extractor_fingerprint = doc.at("extractor_fingerprint").get<std::string>();
    stats.created_at = doc.at("created_at").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed stats file: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  stats.validate();
  return stats;
}

void ensure_fresh(const SalienceStats& stats, const std::string& corpus_hash,
                  const std::string& extractor_fingerprint) {
  if (stats.corpus_hash != corpus_hash) {
    throw StaleStatsError("salience stats were computed for a different corpus (stats " +
                          stats.corpus_hash.substr(0, 12) + ", corpus " + corpus_hash.substr(0, 12) +
                          "); rerun `sbl stats --force`");
  }
  if (stats.extractor_fingerprint != extractor_fingerprint) {
    throw StaleStatsError("salience stats were computed with a different extractor; rerun `sbl stats --force`");
  }
}

Histogram make_histogram(const std::vector<double>& values, double lo, double hi, int bins) {
  if (bins <= 0) throw std::invalid_argument("histogram: bins must be positive");
  Histogram h{lo, hi, std::vector<std::size_t>(static_cast<std::size_t>(bins), 0)};
  for (double v : values) {
    std::size_t idx = 0;
    if (hi > lo) {
      const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
      idx = std::min(static_cast<std::size_t>(t * bins), static_cast<std::size_t>(bins - 1));
    }
    ++h.counts[idx];
  }
  return h;
}

Ranking rank_scores(std::vector<RankEntry> entries, Tap tap, std::size_t k, const SalienceStats* stats) {
  if (k < 1) throw std::invalid_argument("rank_images: k must be >= 1");
  Ranking out;
  out.tap = tap;
  std::vector<double> raws;
  raws.reserve(entries.size());
  for (auto& e : entries) {
    e.normalized = stats ? normalize_salience(e.raw, *stats, tap) : e.raw;
    raws.push_back(e.raw);
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const RankEntry& a, const RankEntry& b) { return a.raw > b.raw; });
  out.sorted = entries;
  out.saturated = k > entries.size();
  const std::size_t n = std::min(k, entries.size());
  out.top.assign(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(n));
  out.bottom.assign(entries.rbegin(), entries.rbegin() + static_cast<std::ptrdiff_t>(n));

  double lo = 0.0;
  double hi = 0.0;
  if (stats && stats->taps.count(tap)) {
    lo = stats->range(tap).min;
    hi = stats->range(tap).max;
  } else if (!raws.empty()) {
    const auto [mn, mx] = std::minmax_element(raws.begin(), raws.end());
    lo = *mn;
    hi = *mx;
  }
  out.histogram = make_histogram(raws, lo, hi);
  return out;
}

Ranking rank_images(const Dataset& corpus, const FrozenExtractor& extractor, Tap tap, std::size_t k,
                    const SalienceStats* stats) {
  std::vector<RankEntry> entries;
  entries.reserve(corpus.images.size());
  for (const auto& img : corpus.images) {
    if (img.pixels.empty()) throw DataError("rank_images: pixels of '" + img.id + "' not loaded");
    entries.push_back(RankEntry{img.id, estimate_salience(img.pixels, extractor, tap), 0.0});
  }
  return rank_scores(std::move(entries), tap, k, stats);
}

}  // namespace sbl
