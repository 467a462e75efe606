#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "sbl/anchors.hpp"
#include "test_util.hpp"

using namespace sbl;

namespace {

AnchorConfig unit_config() {
  AnchorConfig c;
  c.aspect_ratios = {1.0};
  c.scale_multipliers = {1.0};
  c.base_sizes = {32.0};
  c.strides = {16.0};
  return c;
}

}  // namespace

TEST(Anchors, NinePerLocation) {
  const AnchorConfig cfg;
  EXPECT_EQ(cfg.anchors_per_location(), 9u);
  const AnchorSet set = generate_anchors(64, 64, cfg);
  EXPECT_EQ(set.per_location, 9u);
  // 8x8 at stride 8, 4x4 at stride 16
  EXPECT_EQ(set.size(), (64u + 16u) * 9u);
}

TEST(Anchors, UnitSquareAtCellCenters) {
  const AnchorSet set = generate_anchors(64, 48, unit_config());
  ASSERT_EQ(set.levels.size(), 1u);
  EXPECT_EQ(set.levels[0].grid_w, 4);
  EXPECT_EQ(set.levels[0].grid_h, 3);
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 4; ++col) {
      const Box& b = set.boxes[static_cast<std::size_t>(row * 4 + col)];
      EXPECT_DOUBLE_EQ(b.width(), 32.0);
      EXPECT_DOUBLE_EQ(b.height(), 32.0);
      EXPECT_DOUBLE_EQ(b.center_x(), (col + 0.5) * 16.0);
      EXPECT_DOUBLE_EQ(b.center_y(), (row + 0.5) * 16.0);
    }
  }
}

TEST(Anchors, WideRatioArea) {
  AnchorConfig c = unit_config();
  c.aspect_ratios = {3.0};
  const Box b = generate_anchors(32, 32, c).boxes.front();
  EXPECT_NEAR(b.width() / b.height(), 3.0, 1e-6);
  EXPECT_NEAR(b.area(), 1024.0, 1e-6);
}

TEST(Anchors, GridUsesCeil) {
  const AnchorSet set = generate_anchors(50, 17, unit_config());
  EXPECT_EQ(set.levels[0].grid_w, 4);
  EXPECT_EQ(set.levels[0].grid_h, 2);
}

TEST(Anchors, Errors) {
  EXPECT_THROW(generate_anchors(0, 10, AnchorConfig{}), std::invalid_argument);
  EXPECT_THROW(generate_anchors(10, -1, AnchorConfig{}), std::invalid_argument);
  AnchorConfig c;
  c.aspect_ratios.clear();
  EXPECT_THROW(generate_anchors(10, 10, c), std::invalid_argument);
  c = AnchorConfig{};
  c.strides = {8.0};
  EXPECT_THROW(generate_anchors(10, 10, c), std::invalid_argument);
  c = AnchorConfig{};
  c.scale_multipliers = {1.0, -2.0};
  EXPECT_THROW(generate_anchors(10, 10, c), std::invalid_argument);
}

TEST(AnchorsProperty, CountsAreasRatiosOrder) {
  const AnchorConfig cfg;
  for (int size : {64, 100, 128, 256}) {
    const AnchorSet set = generate_anchors(size, size, cfg);
    std::size_t total = 0;
    for (std::size_t l = 0; l < set.levels.size(); ++l) {
      const AnchorLevel& lv = set.levels[l];
      const int g = static_cast<int>(std::ceil(size / cfg.strides[l]));
      EXPECT_EQ(lv.grid_w, g);
      EXPECT_EQ(lv.grid_h, g);
      EXPECT_EQ(lv.offset, total);
      total += lv.count() * 9;
      std::size_t i = lv.offset;
      for (int row = 0; row < g; ++row)
        for (int col = 0; col < g; ++col)
          for (double r : cfg.aspect_ratios)
            for (double m : cfg.scale_multipliers) {
              const Box& b = set.boxes[i];
              EXPECT_EQ(set.level_of[i], static_cast<int>(l));
              const double want = (cfg.base_sizes[l] * m) * (cfg.base_sizes[l] * m);
              EXPECT_NEAR(b.area() / want, 1.0, 1e-4);
              EXPECT_NEAR(b.width() / b.height(), r, 1e-6);
              EXPECT_NEAR(b.center_x(), (col + 0.5) * cfg.strides[l], 1e-9);
              EXPECT_NEAR(b.center_y(), (row + 0.5) * cfg.strides[l], 1e-9);
              ++i;
            }
    }
    EXPECT_EQ(set.size(), total);
  }
}

TEST(Assign, IdenticalAnchorIsPositiveWithZeroDelta) {
  const AnchorSet set = generate_anchors(64, 64, unit_config());
  const GroundTruth gt{set.boxes[5], 2};
  const AssignmentMap m = assign_targets(set, std::span(&gt, 1), 0.5, 0.4);
  ASSERT_EQ(m.labels[5], AnchorLabel::kPositive);
  EXPECT_EQ(m.class_id[5], 2);
  EXPECT_EQ(m.matched_gt[5], 0);
  EXPECT_DOUBLE_EQ(m.targets[5].tx, 0.0);
  EXPECT_DOUBLE_EQ(m.targets[5].tw, 0.0);
}

TEST(Assign, NoGroundTruthAllNegative) {
  const AnchorSet set = generate_anchors(64, 64, AnchorConfig{});
  const AssignmentMap m = assign_targets(set, {}, 0.5, 0.4);
  EXPECT_EQ(m.num_positive, 0u);
  for (auto l : m.labels) EXPECT_EQ(l, AnchorLabel::kNegative);
}

TEST(Assign, IgnoreBandWhenBetterAnchorExists) {
  // Two coincident-center anchors of different size at one location.
  AnchorConfig c;
  c.aspect_ratios = {1.0};
  c.scale_multipliers = {1.0, 1.0 / std::sqrt(0.45)};
  c.base_sizes = {10.0};
  c.strides = {10.0};
  const AnchorSet set = generate_anchors(10, 10, c);
  ASSERT_EQ(set.size(), 2u);
  // gt equals the small anchor; the large anchor contains it with IoU 0.45.
  const GroundTruth gt{set.boxes[0], 0};
  EXPECT_NEAR(iou(set.boxes[1], gt.box), 0.45, 1e-9);
  const AssignmentMap m = assign_targets(set, std::span(&gt, 1), 0.5, 0.4);
  EXPECT_EQ(m.labels[0], AnchorLabel::kPositive);
  EXPECT_EQ(m.labels[1], AnchorLabel::kIgnore);
  EXPECT_EQ(m.class_id[1], -1);
}

TEST(Assign, RejectsBadThresholds) {
  const AnchorSet set = generate_anchors(32, 32, AnchorConfig{});
  EXPECT_THROW(assign_targets(set, {}, 0.4, 0.5), std::invalid_argument);
  EXPECT_THROW(assign_targets(set, {}, 1.2, 0.5), std::invalid_argument);
}

TEST(AssignProperty, PartitionAndForcedMatch) {
  prop::Gen g(99);
  const AnchorSet set = generate_anchors(96, 96, AnchorConfig{});
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<GroundTruth> gts;
    const int n = g.integer(0, 6);
    for (int i = 0; i < n; ++i) gts.push_back({g.box(96.0, 2.0, 60.0), g.integer(0, 2)});
    const AssignmentMap m = assign_targets(set, gts, 0.5, 0.4);
    ASSERT_EQ(m.size(), set.size());
    std::size_t pos = 0;
    for (std::size_t a = 0; a < m.size(); ++a) {
      if (m.labels[a] == AnchorLabel::kPositive) {
        ++pos;
        ASSERT_GE(m.matched_gt[a], 0);
        const auto& gt = gts[static_cast<std::size_t>(m.matched_gt[a])];
        EXPECT_EQ(m.class_id[a], gt.class_id);
        const BoxDelta want = encode_deltas(set.boxes[a], gt.box);
        EXPECT_DOUBLE_EQ(m.targets[a].tx, want.tx);
        EXPECT_DOUBLE_EQ(m.targets[a].th, want.th);
      } else {
        EXPECT_EQ(m.matched_gt[a], -1);
        double best = 0.0;
        for (const auto& gt : gts) best = std::max(best, iou(set.boxes[a], gt.box));
        if (m.labels[a] == AnchorLabel::kNegative) EXPECT_LT(best, 0.4);
        else EXPECT_LT(best, 0.5);
      }
    }
    EXPECT_EQ(pos, m.num_positive);
    // each gt's best anchor ends up positive
    for (const auto& gt : gts) {
      double best = 0.0;
      std::size_t arg = 0;
      for (std::size_t a = 0; a < set.size(); ++a) {
        const double v = iou(set.boxes[a], gt.box);
        if (v > best) best = v, arg = a;
      }
      if (best > 0.0) EXPECT_EQ(m.labels[arg], AnchorLabel::kPositive);
    }
  }
}
