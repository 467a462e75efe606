#include "sbl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sbl/errors.hpp"
#include "sbl/hash.hpp"

namespace sbl {

namespace fs = std::filesystem;
using nlohmann::json;

int Dataset::class_index(const std::string& name) const {
  const auto it = std::find(class_names.begin(), class_names.end(), name);
  return it == class_names.end() ? -1 : static_cast<int>(it - class_names.begin());
}

AnnotationFormat parse_annotation_format(const std::string& name) {
  if (name == "native" || name == "native-json") return AnnotationFormat::kNative;
  if (name == "dota" || name == "dota-hbb") return AnnotationFormat::kDotaHbb;
  throw ConfigError("unknown annotation format '" + name + "' (expected native-json or dota-hbb)");
}

const std::vector<std::string>& dota_classes() {
  static const std::vector<std::string> names{
      "plane", "baseball-diamond", "bridge", "ground-track-field", "small-vehicle",
      "large-vehicle", "ship", "tennis-court", "basketball-court", "storage-tank",
      "soccer-ball-field", "roundabout", "harbor", "swimming-pool", "helicopter"};
  return names;
}

const std::vector<std::string>& synthetic_classes() {
  static const std::vector<std::string> names{"plane", "vehicle", "tank"};
  return names;
}

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

std::string where(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

Dataset load_native(const fs::path& given) {
  const fs::path path = fs::is_directory(given) ? given / "annotations.jsonl" : given;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation file " + path.string());
  Dataset ds;
  std::string text;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::exception& e) {
      throw DataError(where(path, line_no) + ": malformed record: " + e.what());
    }
    try {
      if (!have_header) {
        if (rec.value("format", "") != "sbl-annotations") {
          throw DataError(where(path, line_no) + ": missing sbl-annotations header");
        }
        if (rec.at("version").get<int>() != kNativeFormatVersion) {
          throw DataError(where(path, line_no) + ": unsupported annotation version");
        }
        ds.class_names = rec.at("classes").get<std::vector<std::string>>();
        have_header = true;
        continue;
      }
      AnnotatedImage img;
      img.id = rec.at("id").get<std::string>();
      const auto rel = rec.value("image", std::string{});
      if (!rel.empty()) img.image_path = fs::absolute(path.parent_path() / rel).lexically_normal();
      img.width = rec.value("width", 0);
      img.height = rec.value("height", 0);
      if (rec.contains("lambda")) img.complexity = rec.at("lambda").get<double>();
      for (const auto& obj : rec.at("objects")) {
        const auto b = obj.at("box").get<std::vector<double>>();
        if (b.size() != 4) throw DataError(where(path, line_no) + ": box needs 4 coordinates");
        Annotation ann;
        ann.box = Box{b[0], b[1], b[2], b[3]};
        if (!ann.box.valid()) throw DataError(where(path, line_no) + ": invalid box");
        const auto name = obj.at("class").get<std::string>();
        ann.class_id = ds.class_index(name);
        if (ann.class_id < 0) {
          throw DataError(where(path, line_no) + ": unknown category '" + name +
                          "'; class table: " + join(ds.class_names));
        }
        ann.difficult = obj.value("difficult", false);
        img.objects.push_back(ann);
      }
      ds.images.push_back(std::move(img));
    } catch (const json::exception& e) {
      throw DataError(where(path, line_no) + ": malformed record: " + e.what());
    }
  }
  if (!have_header) throw DataError(path.string() + ": empty annotation file (no header)");
  return ds;
}

fs::path find_dota_image(const fs::path& images_dir, const std::string& stem) {
  for (const char* ext : {".png", ".ppm", ".jpg", ".tif"}) {
    const fs::path candidate = images_dir / (stem + ext);
    if (fs::exists(candidate)) return candidate;
  }
  return images_dir / (stem + ".png");
}

Dataset load_dota(const fs::path& root, const std::vector<std::string>& class_table) {
  const fs::path labels = fs::is_directory(root / "labelTxt") ? root / "labelTxt" : root;
  const fs::path images = fs::is_directory(root / "images") ? root / "images" : root;
  if (!fs::is_directory(labels)) throw DataError("DOTA label directory not found: " + root.string());
  Dataset ds;
  ds.class_names = class_table;

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(labels)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    AnnotatedImage img;
    img.id = file.stem().string();
    img.image_path = fs::absolute(find_dota_image(images, img.id)).lexically_normal();
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
      ++line_no;
      if (!text.empty() && text.back() == '\r') text.pop_back();
      if (text.find_first_not_of(" \t") == std::string::npos) continue;
      if (text.rfind("imagesource:", 0) == 0 || text.rfind("gsd:", 0) == 0) continue;
      std::istringstream fields(text);
      std::vector<std::string> tok;
      for (std::string t; fields >> t;) tok.push_back(t);
      if (tok.size() < 9 || tok.size() > 10) {
        throw DataError(where(file, line_no) + ": expected 8 coordinates, category and difficult flag");
      }
      double xs[4];
      double ys[4];
      try {
        for (int i = 0; i < 4; ++i) {
          std::size_t used = 0;
          xs[i] = std::stod(tok[2 * i], &used);
          if (used != tok[2 * i].size()) throw std::invalid_argument("trailing");
          ys[i] = std::stod(tok[2 * i + 1], &used);
          if (used != tok[2 * i + 1].size()) throw std::invalid_argument("trailing");
        }
      } catch (const std::exception&) {
        throw DataError(where(file, line_no) + ": malformed coordinate");
      }
      Annotation ann;
      ann.box = Box{*std::min_element(xs, xs + 4), *std::min_element(ys, ys + 4),
                    *std::max_element(xs, xs + 4), *std::max_element(ys, ys + 4)};
      ann.class_id = ds.class_index(tok[8]);
      if (ann.class_id < 0) {
        throw DataError(where(file, line_no) + ": unknown category '" + tok[8] +
                        "'; class table: " + join(ds.class_names));
      }
      if (tok.size() == 10) {
        if (tok[9] != "0" && tok[9] != "1") throw DataError(where(file, line_no) + ": difficult flag must be 0 or 1");
        ann.difficult = tok[9] == "1";
      }
      img.objects.push_back(ann);
    }
    ds.images.push_back(std::move(img));
  }
  return ds;
}

}  // namespace

Dataset load_annotations(const fs::path& path, AnnotationFormat format,
                         const std::vector<std::string>& class_table) {
  if (format == AnnotationFormat::kNative) return load_native(path);
  return load_dota(path, class_table);
}

void save_annotations(const Dataset& dataset, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write annotation file " + path.string());
  json header = {{"format", "sbl-annotations"},
                 {"version", kNativeFormatVersion},
                 {"classes", dataset.class_names}};
  out << header.dump() << '\n';
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  for (const auto& img : dataset.images) {
    json rec;
    rec["id"] = img.id;
    if (!img.image_path.empty()) {
      std::error_code ec;
      const fs::path rel = fs::relative(img.image_path, base, ec);
      rec["image"] = (ec || rel.empty() ? img.image_path : rel).generic_string();
    }
    rec["width"] = img.width;
    rec["height"] = img.height;
    if (img.complexity) rec["lambda"] = *img.complexity;
    json objs = json::array();
    for (const auto& o : img.objects) {
      objs.push_back({{"box", {o.box.x_min, o.box.y_min, o.box.x_max, o.box.y_max}},
                      {"class", dataset.class_names.at(static_cast<std::size_t>(o.class_id))},
                      {"difficult", o.difficult}});
    }
    rec["objects"] = std::move(objs);
    out << rec.dump() << '\n';
  }
}

void load_pixels(AnnotatedImage& image) {
  if (image.pixels.empty()) {
    if (image.image_path.empty()) throw DataError("image '" + image.id + "' has no pixel source");
    image.pixels = read_image(image.image_path);
  }
  image.width = image.pixels.width;
  image.height = image.pixels.height;
  const Extent extent{static_cast<double>(image.width), static_cast<double>(image.height)};
  for (auto& o : image.objects) o.box = clip_box(o.box, extent);
}

std::vector<int> chip_offsets(int extent, int chip_size, int overlap) {
  if (chip_size <= 0 || overlap < 0 || overlap >= chip_size) {
    throw std::invalid_argument("chip_image: need 0 <= overlap < chip_size");
  }
  if (extent <= chip_size) return {0};
  const int stride = chip_size - overlap;
  std::vector<int> offsets;
  for (int x = 0;; x += stride) {
    if (x + chip_size >= extent) {
      offsets.push_back(extent - chip_size);
      break;
    }
    offsets.push_back(x);
  }
  return offsets;
}

std::vector<ChipSample> chip_image(const AnnotatedImage& image, int chip_size, int overlap) {
  if (image.pixels.empty()) throw DataError("chip_image: pixels of '" + image.id + "' not loaded");
  const Image& src = image.pixels;
  const auto xs = chip_offsets(src.width, chip_size, overlap);
  const auto ys = chip_offsets(src.height, chip_size, overlap);
  std::vector<ChipSample> out;
  for (int oy : ys) {
    for (int ox : xs) {
      ChipSample sample;
      sample.chip.image = Image(chip_size, chip_size);
      sample.chip.source_id = image.id;
      sample.chip.offset_x = ox;
      sample.chip.offset_y = oy;
      const int w = std::min(chip_size, src.width - ox);
      const int h = std::min(chip_size, src.height - oy);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          for (int c = 0; c < 3; ++c) sample.chip.image.at(x, y, c) = src.at(ox + x, oy + y, c);
        }
      }
      const Box window{static_cast<double>(ox), static_cast<double>(oy),
                       static_cast<double>(ox + chip_size), static_cast<double>(oy + chip_size)};
      for (const auto& obj : image.objects) {
        const double area = obj.box.area();
        const Box clipped{std::max(obj.box.x_min, window.x_min), std::max(obj.box.y_min, window.y_min),
                          std::min(obj.box.x_max, window.x_max), std::min(obj.box.y_max, window.y_max)};
        if (clipped.x_max <= clipped.x_min || clipped.y_max <= clipped.y_min) continue;
        if (area <= 0.0 || clipped.area() < kChipKeepFraction * area) continue;
        Annotation a = obj;
        a.box = Box{clipped.x_min - ox, clipped.y_min - oy, clipped.x_max - ox, clipped.y_max - oy};
        sample.objects.push_back(a);
      }
      out.push_back(std::move(sample));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SynthConfig::validate() const {
  if (num_images < 0) throw ConfigError("synth: num_images must be >= 0");
  if (image_size <= 0) throw ConfigError("synth: image_size must be positive");
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("synth: invalid object count range");
  if (min_object_size < 3 || max_object_size < min_object_size) {
    throw ConfigError("synth: invalid object size range (minimum 3 px)");
  }
  if (max_object_size > image_size) {
    throw ConfigError("synth: object size " + std::to_string(max_object_size) +
                      " exceeds image size " + std::to_string(image_size));
  }
  if (complexity_levels.empty()) throw ConfigError("synth: complexity_levels must be non-empty");
  for (double l : complexity_levels) {
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("synth: complexity levels must lie in [0, 1]");
  }
}

namespace {

struct Rgb {
  float r, g, b;
};

class Canvas {
 public:
  explicit Canvas(Image& img) : img_(img) {}

  void put(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
    img_.at(x, y, 0) = c.r;
    img_.at(x, y, 1) = c.g;
    img_.at(x, y, 2) = c.b;
  }
  void fill_rect(int x0, int y0, int w, int h, const Rgb& c) {
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) put(x, y, c);
    }
  }
  void outline_rect(int x0, int y0, int w, int h, const Rgb& c) {
    for (int x = x0; x < x0 + w; ++x) {
      put(x, y0, c);
      put(x, y0 + h - 1, c);
    }
    for (int y = y0; y < y0 + h; ++y) {
      put(x0, y, c);
      put(x0 + w - 1, y, c);
    }
  }
  void line(double x0, double y0, double x1, double y1, const Rgb& c) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      put(static_cast<int>(std::floor(x0 + t * (x1 - x0))), static_cast<int>(std::floor(y0 + t * (y1 - y0))), c);
    }
  }

 private:
  Image& img_;
};

// Pixel mask of one object shape, local to its bounding square.
struct Shape {
  int w = 0;
  int h = 0;
  std::vector<bool> mask;
  bool at(int x, int y) const { return mask[static_cast<std::size_t>(y) * w + x]; }
};

Shape make_shape(int class_id, int size, std::mt19937_64& rng) {
  Shape s;
  if (class_id == 0) {  // plane: a cross with a long fuselage and a wide wing
    s.w = size;
    s.h = size;
    s.mask.assign(static_cast<std::size_t>(size) * size, false);
    const int bar = std::max(2, size / 4);
    const int mid = (size - bar) / 2;
    const int wing_y = std::max(0, size / 3 - bar / 2);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const bool fuselage = x >= mid && x < mid + bar;
        const bool wing = y >= wing_y && y < wing_y + bar;
        s.mask[static_cast<std::size_t>(y) * size + x] = fuselage || wing;
      }
    }
  } else if (class_id == 1) {  // vehicle: 3:1 bar, horizontal or vertical
    const int length = size;
    const int thick = std::max(3, size / 3);
    const bool horizontal = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    s.w = horizontal ? length : thick;
    s.h = horizontal ? thick : length;
    s.mask.assign(static_cast<std::size_t>(s.w) * s.h, true);
  } else {  // tank: filled disk
    s.w = size;
    s.h = size;
    s.mask.assign(static_cast<std::size_t>(size) * size, false);
    const double r = 0.5 * size;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - r;
        const double dy = y + 0.5 - r;
        s.mask[static_cast<std::size_t>(y) * size + x] = dx * dx + dy * dy <= r * r;
      }
    }
  }
  return s;
}

Rgb class_color(int class_id, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> jitter(-0.05F, 0.05F);
  static constexpr Rgb kBase[] = {{0.15F, 0.25F, 0.95F}, {0.95F, 0.15F, 0.15F}, {0.97F, 0.97F, 0.92F}};
  const Rgb b = kBase[class_id % 3];
  auto cl = [](float v) { return std::clamp(v, 0.0F, 1.0F); };
  return Rgb{cl(b.r + jitter(rng)), cl(b.g + jitter(rng)), cl(b.b + jitter(rng))};
}

void render_background(Image& img, double lambda, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> unit(0.0F, 1.0F);
  const Rgb base{0.35F + 0.15F * unit(rng), 0.38F + 0.15F * unit(rng), 0.30F + 0.12F * unit(rng)};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      img.at(x, y, 0) = base.r;
      img.at(x, y, 1) = base.g;
      img.at(x, y, 2) = base.b;
    }
  }
  if (lambda <= 0.0) return;

  // Low-frequency value noise on a coarse lattice, bilinearly interpolated.
  const int cell = 16;
  const int gw = img.width / cell + 2;
  const int gh = img.height / cell + 2;
  std::vector<float> lattice(static_cast<std::size_t>(gw) * gh);
  for (float& v : lattice) v = unit(rng) * 2.0F - 1.0F;
  const float coarse_amp = static_cast<float>(0.15 * lambda);
  std::normal_distribution<float> grain(0.0F, static_cast<float>(0.08 * lambda));
  for (int y = 0; y < img.height; ++y) {
    const float fy = static_cast<float>(y) / cell;
    const int iy = static_cast<int>(fy);
    const float ty = fy - static_cast<float>(iy);
    for (int x = 0; x < img.width; ++x) {
      const float fx = static_cast<float>(x) / cell;
      const int ix = static_cast<int>(fx);
      const float tx = fx - static_cast<float>(ix);
      auto l = [&](int gx, int gy) { return lattice[static_cast<std::size_t>(gy) * gw + gx]; };
      const float v = (1 - tx) * (1 - ty) * l(ix, iy) + tx * (1 - ty) * l(ix + 1, iy) +
                      (1 - tx) * ty * l(ix, iy + 1) + tx * ty * l(ix + 1, iy + 1);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) += coarse_amp * v + grain(rng);
    }
  }

  // Distractors: thin lines, hollow rectangles and specks.
  Canvas canvas(img);
  const double area_scale = static_cast<double>(img.width) * img.height / (128.0 * 128.0);
  const int clutter = static_cast<int>(std::lround(lambda * 60.0 * area_scale));
  std::uniform_real_distribution<double> px(0.0, img.width);
  std::uniform_real_distribution<double> py(0.0, img.height);
  auto muted = [&]() {
    return Rgb{0.15F + 0.6F * unit(rng), 0.15F + 0.6F * unit(rng), 0.15F + 0.6F * unit(rng)};
  };
  for (int i = 0; i < clutter; ++i) {
    const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
    const Rgb color = muted();
    const double x0 = px(rng);
    const double y0 = py(rng);
    if (kind == 0) {
      const double len = 8.0 + 30.0 * unit(rng);
      const double ang = 6.283185307179586 * unit(rng);
      canvas.line(x0, y0, x0 + len * std::cos(ang), y0 + len * std::sin(ang), color);
    } else if (kind == 1) {
      const int w = 5 + static_cast<int>(15 * unit(rng));
      const int h = 5 + static_cast<int>(15 * unit(rng));
      canvas.outline_rect(static_cast<int>(x0), static_cast<int>(y0), w, h, color);
    } else {
      canvas.fill_rect(static_cast<int>(x0), static_cast<int>(y0), 2, 2, color);
    }
  }
  for (float& v : img.pixels) v = std::clamp(v, 0.0F, 1.0F);
}

}  // namespace

Dataset synthesize_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.class_names = synthetic_classes();
  const int num_classes = static_cast<int>(ds.class_names.size());
  for (int i = 0; i < cfg.num_images; ++i) {
    // Per-image stream so each image is independent of corpus length.
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(i), 0x5b1u};
    std::mt19937_64 rng(seq);
    AnnotatedImage img;
    char id[32];
    std::snprintf(id, sizeof(id), "img_%05d", i);
    img.id = id;
    img.width = cfg.image_size;
    img.height = cfg.image_size;
    const double lambda = cfg.complexity_levels[static_cast<std::size_t>(i) % cfg.complexity_levels.size()];
    img.complexity = lambda;
    img.pixels = Image(cfg.image_size, cfg.image_size);
    render_background(img.pixels, lambda, rng);

    Canvas canvas(img.pixels);
    const int count = std::uniform_int_distribution<int>(cfg.min_objects, cfg.max_objects)(rng);
    std::uniform_int_distribution<int> size_dist(cfg.min_object_size, cfg.max_object_size);
    std::uniform_int_distribution<int> class_dist(0, num_classes - 1);
    for (int k = 0; k < count; ++k) {
      const int cls = class_dist(rng);
      const Shape shape = make_shape(cls, size_dist(rng), rng);
      const Rgb color = class_color(cls, rng);
      for (int attempt = 0; attempt < 100; ++attempt) {
        const int x0 = std::uniform_int_distribution<int>(0, cfg.image_size - shape.w)(rng);
        const int y0 = std::uniform_int_distribution<int>(0, cfg.image_size - shape.h)(rng);
        const Box box{static_cast<double>(x0), static_cast<double>(y0),
                      static_cast<double>(x0 + shape.w), static_cast<double>(y0 + shape.h)};
        const Box padded{box.x_min - 2, box.y_min - 2, box.x_max + 2, box.y_max + 2};
        const bool clash = std::any_of(img.objects.begin(), img.objects.end(),
                                       [&](const Annotation& a) { return iou(a.box, padded) > 0.0; });
        if (clash) continue;
        for (int y = 0; y < shape.h; ++y) {
          for (int x = 0; x < shape.w; ++x) {
            if (shape.at(x, y)) canvas.put(x0 + x, y0 + y, color);
          }
        }
        img.objects.push_back(Annotation{box, cls, false});
        break;
      }
    }
    quantize_8bit(img.pixels);
    ds.images.push_back(std::move(img));
  }
  return ds;
}

void write_dataset(Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "images");
  json manifest_images = json::array();
  for (auto& img : dataset.images) {
    if (img.pixels.empty()) throw DataError("write_dataset: image '" + img.id + "' has no pixels");
    img.image_path = fs::absolute(dir / "images" / (img.id + ".ppm")).lexically_normal();
    write_ppm(img.pixels, img.image_path);
    json entry = {{"id", img.id}, {"objects", img.objects.size()}};
    if (img.complexity) entry["lambda"] = *img.complexity;
    manifest_images.push_back(std::move(entry));
  }
  save_annotations(dataset, dir / "annotations.jsonl");
  json manifest = {{"format", "sbl-synth-manifest"},
                   {"version", 1},
                   {"classes", dataset.class_names},
                   {"images", std::move(manifest_images)}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

std::string dataset_fingerprint(const Dataset& dataset) {
  Sha256 h;
  for (const auto& name : dataset.class_names) {
    h.update(name);
    h.update("\n");
  }
  for (const auto& img : dataset.images) {
    if (img.pixels.empty()) throw DataError("dataset_fingerprint: pixels of '" + img.id + "' not loaded");
    h.update(img.id);
    h.update("\n");
    const int dims[2] = {img.pixels.width, img.pixels.height};
    h.update(dims, sizeof(dims));
    std::vector<unsigned char> raw(img.pixels.pixels.size());
    std::transform(img.pixels.pixels.begin(), img.pixels.pixels.end(), raw.begin(),
                   [](float v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0F, 1.0F) * 255.0F)); });
    h.update(raw.data(), raw.size());
    for (const auto& o : img.objects) {
      const double b[4] = {o.box.x_min, o.box.y_min, o.box.x_max, o.box.y_max};
      h.update(b, sizeof(b));
      const int meta[2] = {o.class_id, o.difficult ? 1 : 0};
      h.update(meta, sizeof(meta));
    }
  }
  return h.hex_digest();
}

double background_variance(const AnnotatedImage& image) {
  const Image& px = image.pixels;
  std::vector<std::size_t> outside;
  for (int y = 0; y < px.height; ++y) {
    for (int x = 0; x < px.width; ++x) {
      const bool inside = std::any_of(image.objects.begin(), image.objects.end(), [&](const Annotation& a) {
        return x >= a.box.x_min && x < a.box.x_max && y >= a.box.y_min && y < a.box.y_max;
      });
      if (!inside) outside.push_back((static_cast<std::size_t>(y) * px.width + x) * 3);
    }
  }
  if (outside.empty()) return 0.0;
  const auto n = static_cast<double>(outside.size());
  double var = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t i : outside) mean += px.pixels[i + c];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i : outside) ss += (px.pixels[i + c] - mean) * (px.pixels[i + c] - mean);
    var += ss / n;
  }
  return var / 3.0;
}

}  // namespace sbl
