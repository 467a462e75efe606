#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "sbl/data.hpp"
#include "sbl/errors.hpp"
#include "test_util.hpp"

using namespace sbl;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

AnnotatedImage blank(int w, int h) {
  AnnotatedImage img;
  img.id = "src";
  img.width = w;
  img.height = h;
  img.pixels = Image(w, h);
  return img;
}

SynthConfig small_synth(std::uint64_t seed = 3) {
  SynthConfig c;
  c.num_images = 12;
  c.image_size = 64;
  c.min_object_size = 8;
  c.max_object_size = 20;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Native, RoundtripIdentical) {
  const auto dir = prop::scratch_dir("native");
  Dataset ds = synthesize_dataset(small_synth());
  write_dataset(ds, dir);
  Dataset back = load_annotations(dir / "annotations.jsonl", AnnotationFormat::kNative);
  ASSERT_EQ(back.images.size(), ds.images.size());
  EXPECT_EQ(back.class_names, ds.class_names);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    EXPECT_EQ(back.images[i].id, ds.images[i].id);
    EXPECT_EQ(back.images[i].objects, ds.images[i].objects);
    EXPECT_EQ(back.images[i].complexity, ds.images[i].complexity);
    load_pixels(back.images[i]);
    EXPECT_EQ(back.images[i].pixels.pixels, ds.images[i].pixels.pixels);
  }
  EXPECT_EQ(dataset_fingerprint(back), dataset_fingerprint(ds));
  // directory form resolves to the same file
  EXPECT_EQ(load_annotations(dir, AnnotationFormat::kNative).images.size(), ds.images.size());
  // save -> load -> save is stable
  save_annotations(back, dir / "again.jsonl");
  std::ifstream a(dir / "annotations.jsonl"), b(dir / "again.jsonl");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(Native, MalformedRecordNamesFileAndLine) {
  const auto dir = prop::scratch_dir("native_bad");
  write_file(dir / "a.jsonl",
             "{\"format\":\"sbl-annotations\",\"version\":1,\"classes\":[\"x\"]}\n"
             "{\"id\":\"a\",\"width\":4,\"height\":4,\"objects\":[]}\n"
             "{not json\n");
  try {
    load_annotations(dir / "a.jsonl", AnnotationFormat::kNative);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("a.jsonl:3"), std::string::npos) << e.what();
  }
}

TEST(Native, UnknownClassListsTable) {
  const auto dir = prop::scratch_dir("native_cls");
  write_file(dir / "a.jsonl",
             "{\"format\":\"sbl-annotations\",\"version\":1,\"classes\":[\"car\",\"ship\"]}\n"
             "{\"id\":\"a\",\"width\":4,\"height\":4,\"objects\":[{\"box\":[0,0,1,1],\"class\":\"tree\"}]}\n");
  try {
    load_annotations(dir / "a.jsonl", AnnotationFormat::kNative);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("car"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("ship"), std::string::npos) << e.what();
  }
}

TEST(Dota, QuadrilateralHull) {
  const auto dir = prop::scratch_dir("dota");
  write_file(dir / "labelTxt" / "P0001.txt",
             "imagesource:GoogleEarth\ngsd:0.146\n0 0 4 0 4 2 0 2 plane 0\n10 5 14 3 16 9 11 12 small-vehicle 1\n");
  write_file(dir / "labelTxt" / "P0002.txt", "");
  Dataset ds = load_annotations(dir, AnnotationFormat::kDotaHbb);
  ASSERT_EQ(ds.images.size(), 2u);
  ASSERT_EQ(ds.images[0].objects.size(), 2u);
  EXPECT_EQ(ds.images[0].objects[0].box, (Box{0, 0, 4, 2}));
  EXPECT_EQ(ds.class_names[static_cast<std::size_t>(ds.images[0].objects[0].class_id)], "plane");
  EXPECT_FALSE(ds.images[0].objects[0].difficult);
  EXPECT_EQ(ds.images[0].objects[1].box, (Box{10, 3, 16, 12}));
  EXPECT_TRUE(ds.images[0].objects[1].difficult);
  EXPECT_TRUE(ds.images[1].objects.empty());
}

TEST(Dota, Errors) {
  const auto dir = prop::scratch_dir("dota_bad");
  write_file(dir / "labelTxt" / "P1.txt", "0 0 4 0 4 2 0 2 dragon 0\n");
  EXPECT_THROW(load_annotations(dir, AnnotationFormat::kDotaHbb), DataError);
  write_file(dir / "labelTxt" / "P1.txt", "0 0 4 0 4 2 plane 0\n");
  try {
    load_annotations(dir, AnnotationFormat::kDotaHbb);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("P1.txt:1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_annotation_format("coco"), ConfigError);
}

TEST(Chip, OffsetsCoverWithInwardShift) {
  EXPECT_EQ(chip_offsets(2048, 1024, 256), (std::vector<int>{0, 768, 1024}));
  EXPECT_EQ(chip_offsets(1024, 1024, 256), (std::vector<int>{0}));
  EXPECT_EQ(chip_offsets(500, 1024, 0), (std::vector<int>{0}));
  EXPECT_THROW(chip_offsets(100, 64, 64), std::invalid_argument);
}

TEST(Chip, SmallImageSinglePaddedChip) {
  AnnotatedImage img = blank(40, 30);
  std::fill(img.pixels.pixels.begin(), img.pixels.pixels.end(), 1.0F);
  img.objects.push_back({{5, 5, 20, 20}, 0, false});
  const auto chips = chip_image(img, 64, 16);
  ASSERT_EQ(chips.size(), 1u);
  EXPECT_EQ(chips[0].chip.image.width, 64);
  EXPECT_EQ(chips[0].chip.image.at(50, 10, 0), 0.0F);
  EXPECT_EQ(chips[0].chip.image.at(10, 10, 0), 1.0F);
  ASSERT_EQ(chips[0].objects.size(), 1u);
  EXPECT_EQ(chips[0].objects[0].box, (Box{5, 5, 20, 20}));
}

TEST(Chip, InteriorBoxUnclippedAndSliverDropped) {
  AnnotatedImage img = blank(200, 100);
  img.objects.push_back({{10, 10, 30, 30}, 1, false});  // inside chip 0 only
  img.objects.push_back({{95, 40, 125, 50}, 0, false});  // 30 wide; 5 px inside chip 0
  const auto chips = chip_image(img, 100, 0);
  ASSERT_EQ(chips.size(), 2u);
  ASSERT_EQ(chips[0].objects.size(), 1u);
  EXPECT_EQ(chips[0].objects[0].box, (Box{10, 10, 30, 30}));
  ASSERT_EQ(chips[1].objects.size(), 1u);  // 25/30 survives in chip 1
  EXPECT_EQ(chips[1].objects[0].box, (Box{0, 40, 25, 50}));
  EXPECT_EQ(chips[1].chip.offset_x, 100);
}

TEST(ChipProperty, CoverageAndBounds) {
  prop::Gen g(77);
  for (int trial = 0; trial < 100; ++trial) {
    AnnotatedImage img = blank(g.integer(50, 300), g.integer(50, 300));
    for (int i = 0, n = g.integer(0, 8); i < n; ++i) {
      Box b = g.box(std::min(img.width, img.height), 2.0, 40.0);
      img.objects.push_back({b, g.integer(0, 2), false});
    }
    const int chip = g.integer(32, 128);
    const int overlap = g.integer(0, chip / 2);
    const auto chips = chip_image(img, chip, overlap);
    for (const auto& c : chips) {
      EXPECT_EQ(c.chip.image.width, chip);
      EXPECT_GE(c.chip.offset_x, 0);
      EXPECT_GE(c.chip.offset_y, 0);
      for (const auto& o : c.objects) {
        EXPECT_GE(o.box.x_min, 0.0);
        EXPECT_LE(o.box.x_max, chip);
        EXPECT_LE(o.box.x_max + c.chip.offset_x, img.width + 1e-9);
        EXPECT_LE(o.box.y_max + c.chip.offset_y, img.height + 1e-9);
      }
    }
    for (const auto& o : img.objects) {
      // does some chip hold >= 30% of this box?
      bool coverable = false;
      for (const auto& c : chips) {
        const Box win{double(c.chip.offset_x), double(c.chip.offset_y), double(c.chip.offset_x + chip),
                      double(c.chip.offset_y + chip)};
        const double iw = std::max(0.0, std::min(win.x_max, o.box.x_max) - std::max(win.x_min, o.box.x_min));
        const double ih = std::max(0.0, std::min(win.y_max, o.box.y_max) - std::max(win.y_min, o.box.y_min));
        coverable = coverable || iw * ih >= kChipKeepFraction * o.box.area();
      }
      if (!coverable) continue;
      bool present = false;
      for (const auto& c : chips)
        for (const auto& a : c.objects) present = present || a.class_id == o.class_id;
      EXPECT_TRUE(present);
    }
  }
}

TEST(Synth, DeterministicAndCounted) {
  const Dataset a = synthesize_dataset(small_synth(5));
  const Dataset b = synthesize_dataset(small_synth(5));
  const Dataset c = synthesize_dataset(small_synth(6));
  ASSERT_EQ(a.images.size(), 12u);
  EXPECT_EQ(dataset_fingerprint(a), dataset_fingerprint(b));
  EXPECT_NE(dataset_fingerprint(a), dataset_fingerprint(c));
  for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(a.images[i].pixels.pixels, b.images[i].pixels.pixels);
}

TEST(Synth, ConfigErrors) {
  SynthConfig c = small_synth();
  c.max_object_size = 100;
  EXPECT_THROW(synthesize_dataset(c), ConfigError);
  c = small_synth();
  c.complexity_levels = {1.5};
  EXPECT_THROW(synthesize_dataset(c), ConfigError);
}

TEST(Synth, ZeroComplexityIsUniform) {
  SynthConfig c = small_synth();
  c.complexity_levels = {0.0};
  for (const auto& img : synthesize_dataset(c).images) EXPECT_EQ(background_variance(img), 0.0);
}

TEST(Synth, ComplexityRaisesBackgroundVariance) {
  SynthConfig c;
  c.num_images = 100;
  c.complexity_levels = {0.1, 0.9};
  const Dataset ds = synthesize_dataset(c);
  double lo = 0.0, hi = 0.0;
  for (const auto& img : ds.images) (*img.complexity > 0.5 ? hi : lo) += background_variance(img);
  EXPECT_GT(hi / 50.0, lo / 50.0);
}

TEST(SynthProperty, ExactExtents) {
  // On a flat background, pixels that differ from the background colour
  // inside each padded box span exactly the annotated box.
  SynthConfig c = small_synth(9);
  c.complexity_levels = {0.0};
  c.num_images = 30;
  for (const auto& img : synthesize_dataset(c).images) {
    const Image& px = img.pixels;
    auto is_bg = [&](int x, int y) {
      for (int ch = 0; ch < 3; ++ch)
        if (px.at(x, y, ch) != px.at(0, 0, ch)) return false;
      return true;
    };
    // corner pixel must be background: skip images with an object at the origin
    bool corner_free = true;
    for (const auto& o : img.objects) corner_free = corner_free && !(o.box.x_min == 0 && o.box.y_min == 0);
    if (!corner_free) continue;
    for (const auto& o : img.objects) {
      int x0 = px.width, y0 = px.height, x1 = -1, y1 = -1;
      const int bx0 = std::max(0, int(o.box.x_min) - 1), by0 = std::max(0, int(o.box.y_min) - 1);
      const int bx1 = std::min(px.width, int(o.box.x_max) + 1), by1 = std::min(px.height, int(o.box.y_max) + 1);
      for (int y = by0; y < by1; ++y)
        for (int x = bx0; x < bx1; ++x)
          if (!is_bg(x, y)) x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x), y1 = std::max(y1, y);
      EXPECT_EQ((Box{double(x0), double(y0), double(x1 + 1), double(y1 + 1)}), o.box) << img.id;
    }
  }
}
