#include "sbl/config.hpp"

#include <fstream>

#include "sbl/errors.hpp"
#include "sbl/json_util.hpp"

namespace sbl {

namespace fs = std::filesystem;
using nlohmann::json;

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + assignment + "' descends into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

namespace {

fs::path resolve(const json& doc, const char* key, const fs::path& base) {
  if (!doc.contains(key) || doc.at(key).is_null()) return {};
  if (!doc.at(key).is_string()) throw ConfigError(std::string(key) + ": expected a path string");
  const fs::path p = doc.at(key).get<std::string>();
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

SynthConfig synth_from_json(const json& j, int& val_images) {
  reject_unknown_keys(j, {"num_images", "val_images", "image_size", "min_objects", "max_objects", "min_object_size",
                          "max_object_size", "complexity_levels", "seed"}, "synth");
  SynthConfig c;
  read_optional(j, "num_images", c.num_images, "synth");
  read_optional(j, "val_images", val_images, "synth");
  read_optional(j, "image_size", c.image_size, "synth");
  read_optional(j, "min_objects", c.min_objects, "synth");
  read_optional(j, "max_objects", c.max_objects, "synth");
  read_optional(j, "min_object_size", c.min_object_size, "synth");
  read_optional(j, "max_object_size", c.max_object_size, "synth");
  read_optional(j, "complexity_levels", c.complexity_levels, "synth");
  read_optional(j, "seed", c.seed, "synth");
  return c;
}

}  // namespace

RunConfig parse_run_config(const json& doc, const fs::path& base_dir) {
  reject_unknown_keys(doc, {"anchors", "detector", "train", "synth", "data", "eval", "rank", "ablate", "stats_file",
                            "output_dir", "checkpoint", "checkpoint_every", "extractor_weights", "predict_input"},
                      "config");
  RunConfig rc;
  rc.snapshot = doc;

  json detector = doc.value("detector", json::object());
  if (detector.contains("anchors")) throw ConfigError("detector: anchors belong in the top-level 'anchors' section");
  if (doc.contains("anchors")) detector["anchors"] = doc.at("anchors");
  rc.detector = detector_config_from_json(detector);
  rc.train = train_config_from_json(doc.value("train", json::object()));
  rc.synth = synth_from_json(doc.value("synth", json::object()), rc.val_images);

  if (doc.contains("data")) {
    const json& d = doc.at("data");
    reject_unknown_keys(d, {"train", "val", "format", "chip_overlap"}, "data");
    rc.data.train = resolve(d, "train", base_dir);
    rc.data.val = resolve(d, "val", base_dir);
    std::string fmt = "native-json";
    read_optional(d, "format", fmt, "data");
    rc.data.format = parse_annotation_format(fmt);
    read_optional(d, "chip_overlap", rc.data.chip_overlap, "data");
  }
  if (doc.contains("eval")) {
    const json& e = doc.at("eval");
    reject_unknown_keys(e, {"iou_threshold", "score_threshold", "nms_threshold", "interpolation"}, "eval");
    read_optional(e, "iou_threshold", rc.eval.iou_threshold, "eval");
    read_optional(e, "score_threshold", rc.eval.score_threshold, "eval");
    read_optional(e, "nms_threshold", rc.eval.nms_threshold, "eval");
    std::string interp = "11point";
    read_optional(e, "interpolation", interp, "eval");
    rc.eval.interpolation = parse_interpolation(interp);
  }
  if (doc.contains("rank")) {
    const json& r = doc.at("rank");
    reject_unknown_keys(r, {"k", "taps"}, "rank");
    read_optional(r, "k", rc.rank.k, "rank");
    if (r.contains("taps")) {
      std::vector<std::string> names;
      read_optional(r, "taps", names, "rank");
      rc.rank.taps.clear();
      for (const auto& n : names) {
        try {
          rc.rank.taps.push_back(parse_tap(n));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("rank.taps: ") + e.what());
        }
      }
    }
  }
  if (doc.contains("ablate")) {
    const json& a = doc.at("ablate");
    reject_unknown_keys(a, {"seeds", "variants"}, "ablate");
    read_optional(a, "seeds", rc.ablate.seeds, "ablate");
    if (a.contains("variants")) {
      for (const auto& v : a.at("variants")) {
        reject_unknown_keys(v, {"name", "train"}, "ablate.variants[]");
        AblateVariant var;
        read_optional(v, "name", var.name, "ablate.variants[]");
        if (var.name.empty()) throw ConfigError("ablate.variants[]: every variant needs a name");
        var.train_overrides = v.value("train", json::object());
        // Validate now rather than halfway through a long sweep.
        json merged = doc.value("train", json::object());
        merged.merge_patch(var.train_overrides);
        train_config_from_json(merged).validate();
        rc.ablate.variants.push_back(std::move(var));
      }
    }
  }
  if (rc.ablate.variants.empty()) {
    rc.ablate.variants.push_back({"baseline", {{"sbl_enabled", false}}});
    rc.ablate.variants.push_back({"sbl-C2-0.5", {{"sbl_enabled", true}, {"tap", "C2"}, {"new_min", 0.5}}});
  }

  rc.stats_file = resolve(doc, "stats_file", base_dir);
  rc.output_dir = resolve(doc, "output_dir", base_dir);
  rc.checkpoint = resolve(doc, "checkpoint", base_dir);
  rc.extractor_weights = resolve(doc, "extractor_weights", base_dir);
  rc.predict_input = resolve(doc, "predict_input", base_dir);
  read_optional(doc, "checkpoint_every", rc.checkpoint_every, "config");

  rc.detector.validate();
  rc.train.validate();
  rc.synth.validate();
  if (rc.val_images < 0) throw ConfigError("synth.val_images must be >= 0");
  if (rc.rank.k < 1) throw ConfigError("rank.k must be >= 1");
  if (rc.ablate.seeds.empty()) throw ConfigError("ablate.seeds must be non-empty");
  return rc;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  fs::path base = fs::current_path();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    base = fs::absolute(path).parent_path();
  }
  for (const auto& o : overrides) apply_override(doc, o);
  try {
    return parse_run_config(doc, base);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace sbl
