#include "app.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "checkpoint.hpp"
#include "datagen.hpp"
#include "error.hpp"
#include "viz.hpp"

namespace flowparts {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorCode::kIo, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  write_file_bytes(path, std::vector<uint8_t>(text.begin(), text.end()));
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

json load_json_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) fail(ErrorCode::kConfig, "config file not found: " + path.string());
  const auto bytes = read_file_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
}

json config_section(const json& config, const char* name) {
  if (config.is_object() && config.contains(name) && config.at(name).is_object()) return config.at(name);
  return config;
}

GenResult run_gen(const json& config, const fs::path& out_dir, bool dry_run,
                  std::optional<uint64_t> seed_override) {
  json cfg = config_section(config, "data");
  if (seed_override) cfg["master_seed"] = *seed_override;
  const auto gen = gen_config_from_json(cfg);
  if (gen.mode == DatasetMode::kGeoPlus && !fs::is_directory(gen.assets_dir)) {
    fail(ErrorCode::kAsset, "asset directory missing: " + gen.assets_dir.string());
  }
  const Manifest manifest = dry_run ? plan_dataset(gen) : write_dataset(gen, out_dir);
  GenResult result;
  result.samples = manifest.total();
  for (const auto& [name, entries] : manifest.splits) result.per_split[name] = entries.size();
  return result;
}

TrainResult run_train(const json& config, const fs::path& data_dir, const fs::path& out_dir,
                      bool deterministic, std::optional<uint64_t> seed_override,
                      const fs::path& resume_from) {
  json cfg = config_section(config, "train");
  if (seed_override) cfg["seed"] = *seed_override;
  if (!data_dir.empty()) cfg["dataset_dir"] = data_dir.string();
  if (deterministic) cfg["deterministic"] = true;
  const auto tc = train_config_from_json(cfg);
  if (tc.dataset_dir.empty()) fail(ErrorCode::kConfig, "no dataset directory given");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "train_config.json", train_config_to_json(tc).dump(2));
  if (!resume_from.empty()) return run_training(resume(resume_from, tc), tc, out_dir);
  return train(tc, out_dir);
}

json run_eval(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& report_path,
              const EvalOptions& options) {
  const auto model = load_model(checkpoint);
  const auto report = evaluate(model, data_dir, options);
  auto j = eval_report_to_json(report, data_dir.string(), checkpoint.string());
  j["split"] = options.split;
  if (!report_path.empty()) write_text(report_path, j.dump(2));
  return j;
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationVariant> ablation_variants(const json& sweep) {
  std::vector<AblationVariant> out;
  if (!sweep.contains("axes") || !sweep.at("axes").is_object()) {
    fail(ErrorCode::kConfig, "sweep spec needs an 'axes' object");
  }
  for (const auto& [axis, values] : sweep.at("axes").items()) {
    if (!values.is_array() || values.empty()) {
      fail(ErrorCode::kConfig, "sweep axis '" + axis + "' needs a non-empty value list");
    }
    for (const auto& v : values) {
      json over = json::object();
      if (axis == "K") {
        over["model"]["K"] = v;
      } else if (axis == "shape_dim") {
        over["model"]["C"] = v.get<int>() + 5;
      } else if (axis == "decoder_depth") {
        over["model"]["decoder_depth"] = v;
      } else if (axis == "occlusion") {
        over["model"]["occlusion"] = v;
      } else {
        fail(ErrorCode::kConfig, "unknown sweep axis '" + axis + "'");
      }
      out.push_back({axis, v, over});
    }
  }
  return out;
}

json apply_variant(const json& base_config, const AblationVariant& variant) {
  json cfg = config_section(base_config, "train");
  // Top-level K / C would shadow the model block.
  cfg.erase("K");
  cfg.erase("C");
  const json& base = config_section(base_config, "train");
  json model = base.value("model", json::object());
  if (base.contains("K")) model["K"] = base["K"];
  if (base.contains("C")) model["C"] = base["C"];
  model.merge_patch(variant.overrides.at("model"));
  cfg["model"] = model;
  return cfg;
}

std::string ablation_markdown(const json& report) {
  std::ostringstream md;
  md << "| Axis | Value | IoU (median) | IoU per seed | EPE (median) |\n";
  md << "|---|---|---|---|---|\n";
  char buf[64];
  for (const auto& row : report.at("rows")) {
    md << "| " << row.at("axis").get<std::string>() << " | " << row.at("value").dump() << " | ";
    if (row.at("iou_median").is_number()) {
      std::snprintf(buf, sizeof(buf), "%.3f", row.at("iou_median").get<double>());
      md << buf;
    } else {
      md << "n/a";
    }
    md << " | ";
    bool first = true;
    for (const auto& run : row.at("runs")) {
      md << (first ? "" : ", ");
      first = false;
      if (run.contains("iou")) {
        std::snprintf(buf, sizeof(buf), "%.3f", run.at("iou").get<double>());
        md << buf;
      } else {
        md << "failed";
      }
    }
    md << " | ";
    if (row.at("epe_median").is_number()) {
      std::snprintf(buf, sizeof(buf), "%.3f", row.at("epe_median").get<double>());
      md << buf;
    } else {
      md << "n/a";
    }
    md << " |\n";
  }
  return md.str();
}

json run_ablate(const json& base_config, const json& sweep, const fs::path& out_dir,
                std::optional<uint64_t> seed_override) {
  const auto variants = ablation_variants(sweep);
  std::vector<uint64_t> seeds = sweep.value("seeds", std::vector<uint64_t>{});
  if (seeds.empty()) seeds.push_back(seed_override.value_or(config_section(base_config, "train").value("seed", uint64_t{0})));
  EvalOptions eo;
  eo.split = sweep.value("eval_split", std::string("test"));
  eo.limit = sweep.value("eval_limit", -1);

  json rows = json::array();
  for (const auto& variant : variants) {
    const std::string name = variant.axis + "_" + variant.value.dump();
    json runs = json::array();
    std::vector<double> ious, epes;
    for (uint64_t seed : seeds) {
      json run = {{"seed", seed}};
      try {
        json cfg = apply_variant(base_config, variant);
        cfg["seed"] = seed;
        if (sweep.contains("data")) cfg["dataset_dir"] = sweep.at("data");
        const auto run_dir = out_dir / name / ("seed_" + std::to_string(seed));
        const auto result = run_train(cfg, {}, run_dir, true, std::nullopt);
        const auto tc = train_config_from_json(cfg);
        const auto model = load_model(result.checkpoint);
        const auto report = evaluate(model, tc.dataset_dir, eo);
        run["iou"] = report.amodal.overall;
        ious.push_back(report.amodal.overall);
        if (report.epe_pixels > 0) {
          run["epe"] = report.epe;
          epes.push_back(report.epe);
        }
        run["checkpoint"] = result.checkpoint.string();
      } catch (const std::exception& e) {
        run["error"] = e.what();
      }
      runs.push_back(run);
    }
    const double iou_med = median(ious);
    const double epe_med = median(epes);
    rows.push_back({{"axis", variant.axis},
                    {"value", variant.value},
                    {"runs", runs},
                    {"iou_median", std::isfinite(iou_med) ? json(iou_med) : json(nullptr)},
                    {"epe_median", std::isfinite(epe_med) ? json(epe_med) : json(nullptr)}});
  }
  json report = {{"seeds", seeds}, {"rows", rows}};
  write_text(out_dir / "ablation.json", report.dump(2));
  write_text(out_dir / "ablation.md", ablation_markdown(report));
  return report;
}

// ---------------------------------------------------------------------------
// Visualization

std::vector<fs::path> run_viz(const VizRequest& req) {
  const auto model = load_model(req.checkpoint);
  std::error_code ec;
  fs::create_directories(req.out_dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + req.out_dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const PngData& png) {
    const auto path = req.out_dir / name;
    write_png(path, png);
    written.push_back(path);
  };

  const int h = model.config().height;
  const int w = model.config().width;
  const size_t plane = static_cast<size_t>(h) * w;
  auto emit_masks = [&](const Image& image, const MaskStack<float>& masks) {
    for (int k = 0; k < masks.num_masks; ++k) {
      emit("mask_" + std::to_string(k) + ".png",
           mask_to_gray(masks.raw.data() + static_cast<size_t>(k) * plane, h, w));
    }
    emit("overlay.png", visibility_overlay(image, masks.visible, masks.num_masks));
  };

  if (req.sample) {
    const auto manifest = read_manifest(req.data_dir);
    const auto it = manifest.splits.find(req.split);
    if (it == manifest.splits.end() || *req.sample < 0 ||
        static_cast<size_t>(*req.sample) >= it->second.size()) {
      fail(ErrorCode::kInvalidArgument, "sample " + std::to_string(*req.sample) +
                                            " not in split '" + req.split + "'");
    }
    const auto sample = read_sample(req.data_dir, req.split, it->second[static_cast<size_t>(*req.sample)]);
    const auto inf = infer_pair(model, sample.image_a, sample.image_b);
    emit_masks(sample.image_a, inf.masks_a);
    emit("flow.png", flow_to_color(inf.flow));
    emit("flow_gt.png", flow_to_color(sample.gt_flow));
    const auto warped = warp(sample.image_b.data, h, w, 3, inf.flow.data);
    Image warped_image(h, w, 3);
    warped_image.data = warped;
    emit("warped.png", image_to_png(warped_image));
  } else if (!req.image.empty()) {
    const auto image = png_to_image(read_png(req.image, 3));
    const auto caps = model.encode(image);
    emit_masks(image, model.masks(caps));
  } else {
    fail(ErrorCode::kInvalidArgument, "viz needs either a sample index or an image path");
  }
  return written;
}

}  // namespace flowparts
