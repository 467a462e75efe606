#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sbl/errors.hpp"
#include "sbl/salience.hpp"
#include "test_util.hpp"

using namespace sbl;

namespace {

/// Every tap is a 2x2x2 map filled with the image's top-left red value.
class ConstantExtractor final : public FrozenExtractor {
 public:
  std::array<FeatureMap, 4> extract(const Image& image) const override {
    std::array<FeatureMap, 4> out;
    for (Tap t : kAllTaps) {
      nn::Tensor v(2, 2, 2);
      std::fill(v.data.begin(), v.data.end(), image.at(0, 0, 0) * (1.0F + static_cast<float>(t)));
      out[static_cast<std::size_t>(t)] = {v, t};
    }
    return out;
  }
  std::string fingerprint() const override { return "constant"; }
};

Dataset corpus_of(const std::vector<float>& values) {
  Dataset ds;
  ds.class_names = {"a"};
  for (std::size_t i = 0; i < values.size(); ++i) {
    AnnotatedImage img;
    img.id = "img" + std::to_string(i);
    img.width = img.height = 4;
    img.pixels = Image(4, 4);
    img.pixels.at(0, 0, 0) = values[i];
    ds.images.push_back(img);
  }
  return ds;
}

SalienceStats band_stats(double lo, double hi, double new_min = 0.5, double new_max = 1.0) {
  SalienceStats s;
  s.taps[Tap::kC2] = {lo, hi};
  s.new_min = new_min;
  s.new_max = new_max;
  return s;
}

FeatureMap map_of(int c, int h, int w, const std::vector<float>& values) {
  FeatureMap m;
  m.values = nn::Tensor(c, h, w);
  m.values.data = values;
  return m;
}

}  // namespace

TEST(Taps, ParseAndName) {
  for (Tap t : kAllTaps) EXPECT_EQ(parse_tap(tap_name(t)), t);
  EXPECT_THROW(parse_tap("C6"), std::invalid_argument);
  EXPECT_THROW(parse_tap("c2x"), std::invalid_argument);
}

TEST(MeanActivation, HandValues) {
  EXPECT_DOUBLE_EQ(mean_activation(map_of(1, 2, 2, {0, 0, 0, 0})), 0.0);
  EXPECT_DOUBLE_EQ(mean_activation(map_of(2, 1, 2, {0.75F, 0.75F, 0.75F, 0.75F})), 0.75);
  EXPECT_DOUBLE_EQ(mean_activation(map_of(1, 2, 2, {1, 2, 3, 4})), 2.5);
  EXPECT_THROW(mean_activation(FeatureMap{}), std::invalid_argument);
}

TEST(MeanActivationProperty, PermutationAndHomogeneity) {
  prop::Gen g(21);
  for (int t = 0; t < 200; ++t) {
    const int c = g.integer(1, 6), h = g.integer(1, 5), w = g.integer(1, 5);
    std::vector<float> v(static_cast<std::size_t>(c * h * w));
    for (auto& x : v) x = static_cast<float>(g.uniform(0, 2));
    const FeatureMap m = map_of(c, h, w, v);
    // permute channel planes
    std::vector<int> perm(static_cast<std::size_t>(c));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), g.engine());
    std::vector<float> pv;
    for (int ch : perm) pv.insert(pv.end(), v.begin() + ch * h * w, v.begin() + (ch + 1) * h * w);
    EXPECT_NEAR(mean_activation(map_of(c, h, w, pv)), mean_activation(m), 1e-12);
    // scaling by a power of two is exact in float
    const float k = std::ldexp(1.0F, g.integer(-3, 3));
    std::vector<float> sv = v;
    for (auto& x : sv) x *= k;
    EXPECT_DOUBLE_EQ(mean_activation(map_of(c, h, w, sv)), k * mean_activation(m));
  }
}

TEST(Extractor, FlatImageGivesZeroSalience) {
  const ConvStackExtractor ex;
  Image img(32, 32);
  std::fill(img.pixels.begin(), img.pixels.end(), 0.6F);
  for (Tap t : kAllTaps) EXPECT_NEAR(estimate_salience(img, ex, t), 0.0, 1e-6);
}

TEST(Extractor, DeterministicAndNonNegative) {
  const ConvStackExtractor a;
  const ConvStackExtractor b;
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), ConvStackExtractor(7).fingerprint());
  prop::Gen g(5);
  Image img(64, 64);
  for (auto& p : img.pixels) p = static_cast<float>(g.uniform(0, 1));
  const auto m1 = a.extract(img);
  const auto m2 = b.extract(img);
  int size = 32;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(m1[i].values.data, m2[i].values.data);
    EXPECT_EQ(m1[i].values.height, size);
    EXPECT_EQ(m1[i].values.channels, ConvStackExtractor::kChannels[i]);
    size /= 2;
    for (float x : m1[i].values.data) EXPECT_GE(x, 0.0F);
    EXPECT_EQ(a.extract(img, kAllTaps[i]).values.data, m1[i].values.data);
  }
  EXPECT_GT(estimate_salience(img, a, Tap::kC2), 0.0);
}

TEST(Extractor, SaveLoadRoundtrip) {
  const auto dir = prop::scratch_dir("extractor");
  const ConvStackExtractor ex(123);
  ex.save(dir / "w.sbl");
  const ConvStackExtractor back = ConvStackExtractor::from_file(dir / "w.sbl");
  EXPECT_EQ(back.fingerprint(), ex.fingerprint());
}

TEST(Extractor, CallCounter) {
  const ConvStackExtractor ex;
  const Image img(16, 16);
  const auto before = salience_call_count();
  estimate_salience(img, ex, Tap::kC3);
  estimate_salience(img, ex, Tap::kC2);
  EXPECT_EQ(salience_call_count(), before + 2);
}

TEST(Stats, TwoImagesMinMax) {
  Dataset ds = corpus_of({0.2F, 0.8F});
  const SalienceStats s = compute_stats(ds, ConstantExtractor{}, {Tap::kC2, Tap::kC4});
  EXPECT_DOUBLE_EQ(s.range(Tap::kC2).min, 0.2F);
  EXPECT_DOUBLE_EQ(s.range(Tap::kC2).max, 0.8F);
  EXPECT_DOUBLE_EQ(s.range(Tap::kC4).max, 0.8F * 3.0F);
  EXPECT_EQ(s.extractor_fingerprint, "constant");
  EXPECT_THROW(s.range(Tap::kC5), StaleStatsError);
}

TEST(Stats, SingleImageDegenerate) {
  const SalienceStats s = compute_stats(corpus_of({0.4F}), ConstantExtractor{}, {Tap::kC2});
  EXPECT_EQ(s.range(Tap::kC2).min, s.range(Tap::kC2).max);
  EXPECT_DOUBLE_EQ(normalize_salience(0.4F, s, Tap::kC2), 1.0);
}

TEST(Stats, EmptyCorpusThrows) {
  EXPECT_THROW(compute_stats(Dataset{}, ConstantExtractor{}, {Tap::kC2}), DataError);
}

TEST(Stats, OrderIndependent) {
  const SalienceStats a = compute_stats(corpus_of({0.3F, 0.9F, 0.1F}), ConstantExtractor{}, {Tap::kC2});
  const SalienceStats b = compute_stats(corpus_of({0.9F, 0.1F, 0.3F}), ConstantExtractor{}, {Tap::kC2});
  EXPECT_EQ(a.taps, b.taps);
}

TEST(Stats, SaveLoadByteIdentical) {
  const auto dir = prop::scratch_dir("stats");
  SalienceStats s = compute_stats(corpus_of({0.1F, 0.7F}), ConstantExtractor{}, {Tap::kC2, Tap::kC3});
  save_stats(s, dir / "a.json");
  const SalienceStats back = load_stats(dir / "a.json");
  EXPECT_EQ(back.taps, s.taps);
  EXPECT_EQ(back.created_at, s.created_at);
  save_stats(back, dir / "b.json");
  std::ifstream fa(dir / "a.json"), fb(dir / "b.json");
  const std::string ta((std::istreambuf_iterator<char>(fa)), {});
  const std::string tb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(ta, tb);
}

TEST(Stats, FreshnessGuard) {
  SalienceStats s = band_stats(0, 1);
  s.corpus_hash = "abc";
  s.extractor_fingerprint = "ex";
  EXPECT_NO_THROW(ensure_fresh(s, "abc", "ex"));
  EXPECT_THROW(ensure_fresh(s, "abd", "ex"), StaleStatsError);
  EXPECT_THROW(ensure_fresh(s, "abc", "other"), StaleStatsError);
}

TEST(Normalize, EndpointsMidpointClamp) {
  const SalienceStats s = band_stats(0.2, 0.6);
  EXPECT_EQ(normalize_salience(0.2, s, Tap::kC2), 0.5);
  EXPECT_EQ(normalize_salience(0.6, s, Tap::kC2), 1.0);
  EXPECT_NEAR(normalize_salience(0.4, s, Tap::kC2), 0.75, 1e-12);
  EXPECT_EQ(normalize_salience(-5.0, s, Tap::kC2), 0.5);
  EXPECT_EQ(normalize_salience(9.0, s, Tap::kC2), 1.0);
  EXPECT_EQ(normalize_salience(0.3, band_stats(0.3, 0.3), Tap::kC2), 1.0);
  EXPECT_EQ(normalize_salience(0.0, band_stats(0.3, 0.3, 0.2, 0.7), Tap::kC2), 0.7);
}

TEST(NormalizeProperty, MonotoneAndBijective) {
  prop::Gen g(8);
  for (int t = 0; t < 300; ++t) {
    const double lo = g.uniform(0, 1);
    const double hi = lo + g.uniform(1e-3, 1);
    const double nmin = g.uniform(0.05, 1.0);
    const double nmax = nmin + g.uniform(0.0, 1.0);
    const SalienceStats s = band_stats(lo, hi, nmin, nmax);
    EXPECT_EQ(normalize_salience(lo, s, Tap::kC2), nmin);
    EXPECT_EQ(normalize_salience(hi, s, Tap::kC2), nmax);
    double prev = -1.0;
    for (int i = -5; i <= 25; ++i) {
      const double x = lo + (hi - lo) * i / 20.0;
      const double y = normalize_salience(x, s, Tap::kC2);
      EXPECT_GE(y, prev);
      EXPECT_GE(y, nmin);
      EXPECT_LE(y, nmax);
      if (i >= 0 && i <= 20) EXPECT_NEAR(y, nmin + (nmax - nmin) * i / 20.0, 1e-12);
      prev = y;
    }
  }
}

TEST(Rank, SortsAndSlices) {
  std::vector<RankEntry> e{{"a", 0.1, 0}, {"b", 0.5, 0}, {"c", 0.9, 0}};
  const Ranking r = rank_scores(e, Tap::kC2, 1);
  ASSERT_EQ(r.top.size(), 1u);
  EXPECT_EQ(r.top[0].image_id, "c");
  EXPECT_EQ(r.bottom[0].image_id, "a");
  EXPECT_FALSE(r.saturated);
  EXPECT_EQ(r.histogram.counts.size(), static_cast<std::size_t>(kHistogramBins));
  EXPECT_EQ(std::accumulate(r.histogram.counts.begin(), r.histogram.counts.end(), std::size_t{0}), 3u);
}

TEST(Rank, SaturatesWhenKTooLarge) {
  std::vector<RankEntry> e{{"a", 0.1, 0}, {"b", 0.5, 0}};
  const Ranking r = rank_scores(e, Tap::kC2, 5);
  EXPECT_TRUE(r.saturated);
  ASSERT_EQ(r.top.size(), 2u);
  ASSERT_EQ(r.bottom.size(), 2u);
  EXPECT_EQ(r.top[0].image_id, "b");
  EXPECT_EQ(r.bottom[0].image_id, "a");
  EXPECT_THROW(rank_scores(e, Tap::kC2, 0), std::invalid_argument);
}

TEST(RankProperty, NormalizationPreservesOrder) {
  prop::Gen g(9);
  for (int t = 0; t < 100; ++t) {
    std::vector<RankEntry> e;
    const int n = g.integer(1, 40);
    for (int i = 0; i < n; ++i) e.push_back({"i" + std::to_string(i), g.uniform(0, 1), 0});
    const SalienceStats s = band_stats(0.0, 1.0);
    const Ranking r = rank_scores(e, Tap::kC2, 3, &s);
    for (std::size_t i = 0; i + 1 < r.sorted.size(); ++i) {
      EXPECT_GE(r.sorted[i].raw, r.sorted[i + 1].raw);
      EXPECT_GE(r.sorted[i].normalized, r.sorted[i + 1].normalized);
    }
    // argsort by normalized (stable) gives the same ids
    auto by_norm = r.sorted;
    std::stable_sort(by_norm.begin(), by_norm.end(),
                     [](const RankEntry& a, const RankEntry& b) { return a.normalized > b.normalized; });
    for (std::size_t i = 0; i < by_norm.size(); ++i) EXPECT_EQ(by_norm[i].image_id, r.sorted[i].image_id);
  }
}

TEST(Histogram, BinsAndEdges) {
  const Histogram h = make_histogram({0.0, 0.5, 1.0, 1.0}, 0.0, 1.0, 4);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{1, 0, 1, 2}));
  EXPECT_THROW(make_histogram({}, 0, 1, 0), std::invalid_argument);
}
