#include "sbl/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sbl/config.hpp"
#include "sbl/errors.hpp"

namespace sbl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Invocation {
  std::string command;
  fs::path config_path;
  std::vector<std::string> overrides;
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<fs::path> input;
  std::optional<fs::path> checkpoint;
  bool force = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

void require_exists(const fs::path& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is not set in the config");
  if (!fs::exists(path)) throw ConfigError(what + " not found: " + path.string());
}

fs::path output_dir(const RunConfig& rc, const std::string& command) {
  if (!rc.output_dir.empty()) return rc.output_dir;
  if (const char* root = std::getenv("SBL_OUTPUT_ROOT")) return fs::path(root) / command;
  return fs::path("runs") / command;
}

std::unique_ptr<FrozenExtractor> make_extractor(const RunConfig& rc) {
  if (!rc.extractor_weights.empty()) {
    require_exists(rc.extractor_weights, "extractor_weights");
    return std::make_unique<ConvStackExtractor>(ConvStackExtractor::from_file(rc.extractor_weights));
  }
  return std::make_unique<ConvStackExtractor>();
}

/// Loads annotations and pixels; images larger or smaller than the detector
/// input are chipped (or padded) to input_size.
Dataset load_corpus(const fs::path& path, const RunConfig& rc) {
  Dataset src = load_annotations(path, rc.data.format);
  Dataset out;
  out.class_names = src.class_names;
  const int size = rc.detector.input_size;
  for (auto& img : src.images) {
    load_pixels(img);
    if (img.width == size && img.height == size) {
      out.images.push_back(std::move(img));
      continue;
    }
    for (auto& chip : chip_image(img, size, rc.data.chip_overlap)) {
      AnnotatedImage piece;
      piece.id = img.id + "@" + std::to_string(chip.chip.offset_x) + "_" + std::to_string(chip.chip.offset_y);
      piece.width = size;
      piece.height = size;
      piece.objects = std::move(chip.objects);
      piece.complexity = img.complexity;
      piece.pixels = std::move(chip.chip.image);
      out.images.push_back(std::move(piece));
    }
  }
  if (static_cast<int>(out.class_names.size()) > rc.detector.num_classes) {
    throw ConfigError("dataset has " + std::to_string(out.class_names.size()) +
                      " classes but detector.num_classes is " + std::to_string(rc.detector.num_classes));
  }
  return out;
}

fs::path stats_path(const RunConfig& rc, const fs::path& out_dir) {
  return rc.stats_file.empty() ? out_dir / "salience_stats.json" : rc.stats_file;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& rc, const fs::path& out) {
  SynthConfig train_cfg = rc.synth;
  Dataset train = synthesize_dataset(train_cfg);
  write_dataset(train, out / "train");
  SynthConfig val_cfg = rc.synth;
  val_cfg.num_images = rc.val_images;
  val_cfg.seed = rc.synth.seed + 1000003ULL;
  Dataset val = synthesize_dataset(val_cfg);
  write_dataset(val, out / "val");
  std::cout << "synth: wrote " << train.images.size() << " train and " << val.images.size() << " val images to "
            << out.string() << "\n";
  return 0;
}

SalienceStats compute_corpus_stats(const RunConfig& rc, const Dataset& corpus, const FrozenExtractor& extractor) {
  return compute_stats(corpus, extractor, std::vector<Tap>(kAllTaps.begin(), kAllTaps.end()), rc.train.new_min,
                       rc.train.new_max);
}

int cmd_stats(const RunConfig& rc, const fs::path& out, bool force) {
  require_exists(rc.data.train, "data.train");
  const fs::path target = stats_path(rc, out);
  if (fs::exists(target) && !force) {
    throw ConfigError("stats file " + target.string() + " already exists; pass --force to overwrite");
  }
  const Dataset corpus = load_corpus(rc.data.train, rc);
  const auto extractor = make_extractor(rc);
  SalienceStats stats = compute_corpus_stats(rc, corpus, *extractor);
  if (fs::exists(target)) {
    // Recomputing identical statistics keeps the original timestamp.
    try {
      const SalienceStats prev = load_stats(target);
      if (prev.corpus_hash == stats.corpus_hash && prev.extractor_fingerprint == stats.extractor_fingerprint &&
          prev.new_min == stats.new_min && prev.new_max == stats.new_max && prev.taps == stats.taps) {
        stats.created_at = prev.created_at;
      }
    } catch (const Error&) {
    }
  }
  if (!target.parent_path().empty()) fs::create_directories(target.parent_path());
  save_stats(stats, target);
  std::cout << "stats: " << corpus.images.size() << " images -> " << target.string() << "\n";
  for (const auto& [tap, r] : stats.taps) {
    std::cout << "  " << tap_name(tap) << " min=" << r.min << " max=" << r.max << "\n";
  }
  return 0;
}

struct TrainOutcome {
  Detector detector;
  std::string fingerprint_before;
  std::string fingerprint_after;
};

/// Shared by `train` and `ablate`. Writes checkpoint(s) and the step log
/// under `out`.
TrainOutcome train_run(const RunConfig& rc, const TrainConfig& tc, const Dataset& corpus,
                       const FrozenExtractor& extractor, const SalienceStats* stats, const fs::path& stats_ref,
                       const fs::path& out) {
  fs::create_directories(out);
  Detector detector(rc.detector, tc.seed);
  const std::string before = extractor.fingerprint();
  Trainer trainer(detector, tc, tc.sbl_enabled ? &extractor : nullptr, tc.sbl_enabled ? stats : nullptr);
  auto samples = prepare_samples(detector, corpus);

  std::ofstream log(out / "train_log.jsonl", std::ios::binary);
  if (!log) throw DataError("cannot write training log in " + out.string());
  CheckpointInfo info;
  info.extra = {{"stats_file", stats_ref.empty() ? "" : stats_ref.string()},
                {"extractor_fingerprint", before},
                {"config", rc.snapshot}};
  fit(trainer, samples, [&](const StepRecord& rec) {
    json images = json::array();
    for (std::size_t i = 0; i < rec.images.size(); ++i) {
      json row = to_json(rec.images[i]);
      row["id"] = rec.image_ids[i];
      images.push_back(std::move(row));
    }
    log << json{{"step", rec.step + 1}, {"lr", rec.learning_rate}, {"batch_loss", rec.batch_loss},
                {"grad_norm", rec.grad_norm}, {"images", images}}.dump()
        << '\n';
    if (rc.checkpoint_every > 0 && (rec.step + 1) % rc.checkpoint_every == 0) {
      info.step = rec.step + 1;
      save_checkpoint(out / ("checkpoint_" + std::to_string(rec.step + 1) + ".sbl"), detector, &trainer, info);
    }
  });
  info.step = trainer.step();
  save_checkpoint(out / "checkpoint.sbl", detector, &trainer, info);
  const std::string after = extractor.fingerprint();
  if (after != before) throw Error("frozen extractor parameters changed during training");
  return TrainOutcome{std::move(detector), before, after};
}

const SalienceStats* load_fresh_stats(const RunConfig& rc, const Dataset& corpus, const FrozenExtractor& extractor,
                                      const fs::path& path, std::optional<SalienceStats>& holder) {
  require_exists(path, "stats_file");
  holder = load_stats(path);
  ensure_fresh(*holder, dataset_fingerprint(corpus), extractor.fingerprint());
  (void)rc;
  return &*holder;
}

int cmd_train(const RunConfig& rc, const fs::path& out) {
  require_exists(rc.data.train, "data.train");
  const Dataset corpus = load_corpus(rc.data.train, rc);
  const auto extractor = make_extractor(rc);
  std::optional<SalienceStats> stats;
  fs::path ref;
  if (rc.train.sbl_enabled) {
    ref = stats_path(rc, out);
    load_fresh_stats(rc, corpus, *extractor, ref, stats);
  }
  fs::create_directories(out);
  write_json(out / "config.json", rc.snapshot);
  const TrainOutcome res = train_run(rc, rc.train, corpus, *extractor, stats ? &*stats : nullptr, ref, out);
  write_json(out / "train_summary.json", {{"iterations", rc.train.iterations},
                                           {"images", corpus.images.size()},
                                           {"parameters", res.detector.parameter_count()},
                                           {"extractor_fingerprint_before", res.fingerprint_before},
                                           {"extractor_fingerprint_after", res.fingerprint_after},
                                           {"checkpoint", "checkpoint.sbl"}});
  std::cout << "train: " << rc.train.iterations << " steps -> " << (out / "checkpoint.sbl").string() << "\n";
  return 0;
}

std::vector<Detection> predict_any_size(const Detector& det, const Image& image, const RunConfig& rc) {
  const int size = det.config().input_size;
  if (image.width == size && image.height == size) {
    return predict(det, image, rc.eval.score_threshold, rc.eval.nms_threshold);
  }
  AnnotatedImage holder;
  holder.pixels = image;
  holder.width = image.width;
  holder.height = image.height;
  std::vector<Detection> all;
  for (const auto& chip : chip_image(holder, size, rc.data.chip_overlap)) {
    for (auto d : predict(det, chip.chip.image, rc.eval.score_threshold, rc.eval.nms_threshold)) {
      d.box = clip_box(Box{d.box.x_min + chip.chip.offset_x, d.box.y_min + chip.chip.offset_y,
                           d.box.x_max + chip.chip.offset_x, d.box.y_max + chip.chip.offset_y},
                       Extent{static_cast<double>(image.width), static_cast<double>(image.height)});
      all.push_back(d);
    }
  }
  return nms(all, rc.eval.nms_threshold);
}

EvalResult evaluate_detector(const Detector& det, const Dataset& corpus, const RunConfig& rc) {
  std::vector<ImageResult> results;
  results.reserve(corpus.images.size());
  for (const auto& img : corpus.images) {
    results.push_back({predict(det, img.pixels, rc.eval.score_threshold, rc.eval.nms_threshold), img.objects});
  }
  return evaluate(results, corpus.class_names, rc.eval.iou_threshold, rc.eval.score_threshold,
                  rc.eval.interpolation);
}

fs::path checkpoint_path(const RunConfig& rc, const Invocation& inv, const fs::path& out) {
  if (inv.checkpoint) return *inv.checkpoint;
  if (!rc.checkpoint.empty()) return rc.checkpoint;
  return out / "checkpoint.sbl";
}

int cmd_eval(const RunConfig& rc, const Invocation& inv, const fs::path& out) {
  const fs::path ckpt = checkpoint_path(rc, inv, out);
  require_exists(ckpt, "checkpoint");
  require_exists(rc.data.val, "data.val");
  const LoadedCheckpoint loaded = load_checkpoint(ckpt);
  const Dataset corpus = load_corpus(rc.data.val, rc);
  const EvalResult res = evaluate_detector(loaded.detector, corpus, rc);
  fs::create_directories(out);
  json report = to_json(res);
  report["checkpoint"] = ckpt.string();
  report["images"] = corpus.images.size();
  write_json(out / "eval_report.json", report);
  write_text(out / "pr_curves.csv", pr_curves_csv(res));
  std::cout << "eval: mAP@" << rc.eval.iou_threshold << " = " << std::fixed << std::setprecision(4) << res.map
            << "\n";
  for (const auto& [c, ev] : res.per_class) {
    std::cout << "  " << std::left << std::setw(12) << res.class_names[static_cast<std::size_t>(c)] << " AP "
              << ev.ap << "  P " << ev.precision << "  R " << ev.recall << "  F1 " << ev.f1 << "\n";
  }
  return 0;
}

int cmd_rank(const RunConfig& rc, const fs::path& out) {
  require_exists(rc.data.train, "data.train");
  const Dataset corpus = load_corpus(rc.data.train, rc);
  const auto extractor = make_extractor(rc);
  std::optional<SalienceStats> stats;
  const fs::path sp = stats_path(rc, out);
  if (fs::exists(sp)) {
    stats = load_stats(sp);
    ensure_fresh(*stats, dataset_fingerprint(corpus), extractor->fingerprint());
  } else {
    stats = compute_corpus_stats(rc, corpus, *extractor);
  }
  fs::create_directories(out);
  json summary = json::object();
  for (Tap tap : rc.rank.taps) {
    const Ranking r = rank_images(corpus, *extractor, tap, rc.rank.k, &*stats);
    std::ostringstream csv;
    csv << std::setprecision(17) << "rank,image_id,raw_S,normalized_S\n";
    for (std::size_t i = 0; i < r.sorted.size(); ++i) {
      csv << i + 1 << ',' << r.sorted[i].image_id << ',' << r.sorted[i].raw << ',' << r.sorted[i].normalized << '\n';
    }
    write_text(out / ("ranking_" + tap_name(tap) + ".csv"), csv.str());
    std::ostringstream hist;
    hist << std::setprecision(17) << "bin,lo,hi,count\n";
    const auto bins = r.histogram.counts.size();
    const double width = (r.histogram.hi - r.histogram.lo) / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) {
      hist << b << ',' << r.histogram.lo + width * static_cast<double>(b) << ','
           << r.histogram.lo + width * static_cast<double>(b + 1) << ',' << r.histogram.counts[b] << '\n';
    }
    write_text(out / ("histogram_" + tap_name(tap) + ".csv"), hist.str());
    json top = json::array();
    json bottom = json::array();
    for (const auto& e : r.top) top.push_back({{"image_id", e.image_id}, {"raw_S", e.raw}, {"normalized_S", e.normalized}});
    for (const auto& e : r.bottom) bottom.push_back({{"image_id", e.image_id}, {"raw_S", e.raw}, {"normalized_S", e.normalized}});
    summary[tap_name(tap)] = {{"top", top}, {"bottom", bottom}, {"saturated", r.saturated}};

    std::cout << "rank " << tap_name(tap) << (r.saturated ? " (k exceeds corpus size)" : "") << "\n  top:   ";
    for (const auto& e : r.top) std::cout << e.image_id << ' ';
    std::cout << "\n  bottom:";
    for (const auto& e : r.bottom) std::cout << ' ' << e.image_id;
    std::cout << "\n";
  }
  write_json(out / "rank_summary.json", summary);
  return 0;
}

int cmd_predict(const RunConfig& rc, const Invocation& inv, const fs::path& out) {
  const fs::path ckpt = checkpoint_path(rc, inv, out);
  require_exists(ckpt, "checkpoint");
  const fs::path input = inv.input ? *inv.input : rc.predict_input;
  require_exists(input, "predict input");
  const LoadedCheckpoint loaded = load_checkpoint(ckpt);

  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".ppm" || ext == ".png")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  const auto class_names = [&]() -> std::vector<std::string> {
    if (!rc.data.train.empty() && fs::exists(rc.data.train)) return load_annotations(rc.data.train, rc.data.format).class_names;
    return {};
  }();
  fs::create_directories(out);
  std::ofstream det_out(out / "detections.jsonl", std::ios::binary);
  std::size_t total = 0;
  for (const auto& f : files) {
    const Image img = read_image(f);
    json dets = json::array();
    for (const auto& d : predict_any_size(loaded.detector, img, rc)) {
      json row = {{"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}}, {"score", d.score},
                  {"class_id", d.class_id}};
      if (static_cast<std::size_t>(d.class_id) < class_names.size()) {
        row["class"] = class_names[static_cast<std::size_t>(d.class_id)];
      }
      dets.push_back(std::move(row));
      ++total;
    }
    det_out << json{{"image", f.filename().string()}, {"detections", dets}}.dump() << '\n';
  }
  std::cout << "predict: " << total << " detections over " << files.size() << " image(s) -> "
            << (out / "detections.jsonl").string() << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& rc, const fs::path& out, bool force) {
  require_exists(rc.data.train, "data.train");
  require_exists(rc.data.val, "data.val");
  const Dataset train = load_corpus(rc.data.train, rc);
  const Dataset val = load_corpus(rc.data.val, rc);
  const auto extractor = make_extractor(rc);
  fs::create_directories(out);
  write_json(out / "config.json", rc.snapshot);

  const fs::path sp = stats_path(rc, out);
  std::optional<SalienceStats> stats;
  if (fs::exists(sp) && !force) {
    load_fresh_stats(rc, train, *extractor, sp, stats);
  } else {
    stats = compute_corpus_stats(rc, train, *extractor);
    save_stats(*stats, sp);
  }

  struct Row {
    std::string name;
    TrainConfig cfg;
    std::vector<double> maps;
  };
  std::vector<Row> rows;
  for (const auto& variant : rc.ablate.variants) {
    json merged = rc.snapshot.value("train", json::object());
    merged.merge_patch(variant.train_overrides);
    Row row{variant.name, train_config_from_json(merged), {}};
    for (std::uint64_t seed : rc.ablate.seeds) {
      TrainConfig tc = row.cfg;
      tc.seed = seed;
      const fs::path run_dir = out / variant.name / ("seed" + std::to_string(seed));
      const TrainOutcome res = train_run(rc, tc, train, *extractor, &*stats, sp, run_dir);
      const EvalResult ev = evaluate_detector(res.detector, val, rc);
      write_json(run_dir / "eval_report.json", to_json(ev));
      row.maps.push_back(ev.map);
      std::cout << "ablate: " << variant.name << " seed " << seed << " mAP " << std::fixed << std::setprecision(4)
                << ev.map << std::endl;
    }
    rows.push_back(std::move(row));
  }

  std::ostringstream csv;
  std::ostringstream md;
  csv << std::setprecision(6) << std::fixed;
  md << std::setprecision(4) << std::fixed;
  csv << "variant,sbl,tap,new_min,new_max,normalization";
  md << "| variant | tap | new_min | Normalization |";
  for (std::uint64_t s : rc.ablate.seeds) {
    csv << ",map_seed" << s;
    md << " mAP seed " << s << " |";
  }
  csv << ",map_mean,map_std\n";
  md << " mean mAP | std |\n|---|---|---|---|";
  for (std::size_t i = 0; i < rc.ablate.seeds.size() + 2; ++i) md << "---|";
  md << "\n";
  json table = json::array();
  for (const auto& r : rows) {
    double mean = 0.0;
    for (double m : r.maps) mean += m;
    mean /= static_cast<double>(r.maps.size());
    double var = 0.0;
    for (double m : r.maps) var += (m - mean) * (m - mean);
    const double stddev = r.maps.size() > 1 ? std::sqrt(var / static_cast<double>(r.maps.size() - 1)) : 0.0;
    const bool sbl = r.cfg.sbl_enabled;
    const std::string tap = sbl ? tap_name(r.cfg.tap) : "-";
    const std::string nmin = sbl && r.cfg.normalize ? std::to_string(r.cfg.new_min).substr(0, 4) : "-";
    const std::string norm = sbl ? (r.cfg.normalize ? "Y" : "N") : "-";
    csv << r.name << ',' << (sbl ? 1 : 0) << ',' << tap << ',' << (sbl ? r.cfg.new_min : 0.0) << ','
        << (sbl ? r.cfg.new_max : 0.0) << ',' << norm;
    md << "| " << r.name << " | " << tap << " | " << nmin << " | " << norm << " |";
    for (double m : r.maps) {
      csv << ',' << m;
      md << ' ' << m << " |";
    }
    csv << ',' << mean << ',' << stddev << '\n';
    md << ' ' << mean << " | " << stddev << " |\n";
    table.push_back({{"variant", r.name}, {"train", to_json(r.cfg)}, {"maps", r.maps}, {"mean", mean}, {"std", stddev}});
  }
  write_text(out / "ablation.csv", csv.str());
  write_text(out / "ablation.md", md.str());
  write_json(out / "ablation.json", {{"seeds", rc.ablate.seeds}, {"rows", table}});
  std::cout << md.str();
  return 0;
}

int dispatch(const Invocation& inv) {
  std::vector<std::string> overrides = inv.overrides;
  if (inv.seed) {
    overrides.push_back("train.seed=" + std::to_string(*inv.seed));
    overrides.push_back("synth.seed=" + std::to_string(*inv.seed));
  }
  if (inv.k) overrides.push_back("rank.k=" + std::to_string(*inv.k));
  RunConfig rc = load_run_config(inv.config_path, overrides);
  // Kept out of the snapshot so identical runs into different directories
  // produce identical artifacts.
  if (inv.out) rc.output_dir = fs::absolute(*inv.out);
  const fs::path out = output_dir(rc, inv.command);

  if (inv.command == "synth") {
    fs::create_directories(out);
    write_json(out / "config.json", rc.snapshot);
    return cmd_synth(rc, out);
  }
  if (inv.command == "stats") return cmd_stats(rc, out, inv.force);
  if (inv.command == "train") return cmd_train(rc, out);
  if (inv.command == "eval") return cmd_eval(rc, inv, out);
  if (inv.command == "rank") return cmd_rank(rc, out);
  if (inv.command == "predict") return cmd_predict(rc, inv, out);
  if (inv.command == "ablate") return cmd_ablate(rc, out, inv.force);
  throw ConfigError("unknown command '" + inv.command + "'");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Salience-biased one-stage detector training toolkit", "sbl"};
  Invocation inv;
  std::string out;
  std::string input;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::size_t k = 0;
  app.add_option("command", inv.command, "synth | stats | train | eval | rank | predict | ablate")
      ->required()
      ->check(CLI::IsMember({"synth", "stats", "train", "eval", "rank", "predict", "ablate"}));
  app.add_option("--config,-c", inv.config_path, "Run configuration (JSON)");
  app.add_option("--set", inv.overrides, "Override a config value, key.path=value")->take_all();
  auto* out_opt = app.add_option("--out,-o", out, "Output directory (default $SBL_OUTPUT_ROOT/<command>)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for training and synthesis");
  auto* k_opt = app.add_option("--k", k, "Number of top/bottom images for rank");
  auto* input_opt = app.add_option("--input", input, "Image file or directory for predict");
  auto* ckpt_opt = app.add_option("--checkpoint", checkpoint, "Checkpoint for eval/predict");
  app.add_flag("--force", inv.force, "Overwrite existing stats");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (*out_opt) inv.out = out;
  if (*seed_opt) inv.seed = seed;
  if (*k_opt) inv.k = k;
  if (*input_opt) inv.input = input;
  if (*ckpt_opt) inv.checkpoint = checkpoint;

  try {
    return dispatch(inv);
  } catch (const Error& e) {
    std::cerr << "sbl " << inv.command << ": " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::invalid_argument& e) {
    std::cerr << "sbl " << inv.command << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "sbl " << inv.command << ": unexpected error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace sbl
