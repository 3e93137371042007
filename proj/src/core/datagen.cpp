#include "datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "error.hpp"

namespace flowparts {

namespace fs = std::filesystem;
using nlohmann::json;

const char* shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
  }
  return "unknown";
}

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "circle") return ShapeKind::kCircle;
  if (name == "square") return ShapeKind::kSquare;
  if (name == "triangle") return ShapeKind::kTriangle;
  fail(ErrorCode::kConfig, "unknown shape kind '" + name + "'");
}

void GenConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfig, what); };
  if (height < 1 || width < 1) bad("image size must be positive");
  if (min_shapes < 1) bad("min_shapes must be >= 1");
  if (max_shapes < min_shapes) bad("max_shapes must be >= min_shapes");
  if (kinds.empty()) bad("at least one shape kind must be allowed");
  if (!(scale_min > 0.0) || scale_max < scale_min) bad("scale range must satisfy 0 < min <= max");
  if (max_translation_px < 0) bad("max_translation_px must be non-negative");
  if (max_rotation < 0.0 || max_log_scale < 0.0) bad("motion ranges must be non-negative");
  if (min_contrast < 0.0 || min_contrast >= 1.0) bad("min_contrast must be in [0, 1)");
  if (train_size < 0 || val_size < 0 || test_size < 0) bad("split sizes must be non-negative");
  if (mode == DatasetMode::kGeoPlus && assets_dir.empty()) {
    bad("geo_plus mode requires assets_dir");
  }
}

GenConfig gen_config_from_json(const json& j) {
  GenConfig c;
  try {
    if (j.contains("mode")) {
      const auto mode = j.at("mode").get<std::string>();
      if (mode == "geo") {
        c.mode = DatasetMode::kGeo;
      } else if (mode == "geo_plus") {
        c.mode = DatasetMode::kGeoPlus;
      } else {
        fail(ErrorCode::kConfig, "unknown dataset mode '" + mode + "'");
      }
    }
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.min_shapes = j.value("min_shapes", c.min_shapes);
    c.max_shapes = j.value("max_shapes", c.max_shapes);
    if (j.contains("kinds")) {
      c.kinds.clear();
      for (const auto& k : j.at("kinds")) c.kinds.push_back(parse_shape_kind(k.get<std::string>()));
    }
    c.scale_min = j.value("scale_min", c.scale_min);
    c.scale_max = j.value("scale_max", c.scale_max);
    c.max_translation_px = j.value("max_translation_px", c.max_translation_px);
    c.max_rotation = j.value("max_rotation", c.max_rotation);
    c.max_log_scale = j.value("max_log_scale", c.max_log_scale);
    c.min_contrast = j.value("min_contrast", c.min_contrast);
    c.train_size = j.value("train_size", c.train_size);
    c.val_size = j.value("val_size", c.val_size);
    c.test_size = j.value("test_size", c.test_size);
    c.master_seed = j.value("master_seed", c.master_seed);
    if (j.contains("assets_dir")) c.assets_dir = j.at("assets_dir").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad generator config: ") + e.what());
  }
  c.validate();
  return c;
}

json gen_config_to_json(const GenConfig& c) {
  json kinds = json::array();
  for (auto k : c.kinds) kinds.push_back(shape_kind_name(k));
  return {{"mode", c.mode == DatasetMode::kGeo ? "geo" : "geo_plus"},
          {"height", c.height},
          {"width", c.width},
          {"min_shapes", c.min_shapes},
          {"max_shapes", c.max_shapes},
          {"kinds", kinds},
          {"scale_min", c.scale_min},
          {"scale_max", c.scale_max},
          {"max_translation_px", c.max_translation_px},
          {"max_rotation", c.max_rotation},
          {"max_log_scale", c.max_log_scale},
          {"min_contrast", c.min_contrast},
          {"train_size", c.train_size},
          {"val_size", c.val_size},
          {"test_size", c.test_size},
          {"master_seed", c.master_seed},
          {"assets_dir", c.assets_dir.string()}};
}

// ---------------------------------------------------------------------------
// Assets

namespace {

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    fail(ErrorCode::kAsset, "asset directory missing: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorCode::kAsset, "no .png assets in " + dir.string());
  return files;
}

}  // namespace

AssetStore AssetStore::load(const fs::path& dir) {
  AssetStore store;
  for (const auto& p : sorted_pngs(dir / "backgrounds")) {
    store.add_background(png_to_image(read_png(p, 3)));
  }
  for (const auto& p : sorted_pngs(dir / "textures")) {
    store.add_texture(png_to_image(read_png(p, 3)));
  }
  return store;
}

const Image& AssetStore::background(int id) const {
  if (id < 0 || id >= num_backgrounds()) {
    fail(ErrorCode::kAsset, "background id " + std::to_string(id) + " not available");
  }
  return backgrounds_[static_cast<size_t>(id)];
}

const Image& AssetStore::texture(int id) const {
  if (id < 0 || id >= num_textures()) {
    fail(ErrorCode::kAsset, "texture id " + std::to_string(id) + " not available");
  }
  return textures_[static_cast<size_t>(id)];
}

// ---------------------------------------------------------------------------
// Scene sampling

namespace {

float quantized_uniform(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> byte(0, 255);
  return static_cast<float>(byte(rng)) / 255.0f;
}

Rgb random_color(std::mt19937_64& rng) {
  return {quantized_uniform(rng), quantized_uniform(rng), quantized_uniform(rng)};
}

float contrast(const Rgb& a, const Rgb& b) {
  float c = 0.0f;
  for (int i = 0; i < 3; ++i) c = std::max(c, std::abs(a[i] - b[i]));
  return c;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t sample_seed(uint64_t master_seed, const std::string& split, int idx) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : split) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return splitmix64(splitmix64(master_seed ^ h) + static_cast<uint64_t>(idx));
}

SceneSpec sample_scene(uint64_t seed, const GenConfig& config, AssetCounts assets) {
  config.validate();
  if (config.mode == DatasetMode::kGeoPlus &&
      (assets.backgrounds < 1 || assets.textures < 1)) {
    fail(ErrorCode::kAsset, "geo_plus sampling requires background and texture assets");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(config.min_shapes, config.max_shapes);
  std::uniform_int_distribution<size_t> kind_dist(0, config.kinds.size() - 1);
  std::uniform_real_distribution<double> scale_dist(config.scale_min, config.scale_max);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> shift_dist(-config.max_translation_px,
                                                config.max_translation_px);

  SceneSpec scene;
  if (config.mode == DatasetMode::kGeoPlus) {
    scene.background_image_id =
        std::uniform_int_distribution<int>(0, assets.backgrounds - 1)(rng);
  } else {
    scene.background = random_color(rng);
  }

  const int n = count_dist(rng);
  std::vector<int> ranks(static_cast<size_t>(n));
  std::iota(ranks.begin(), ranks.end(), 0);
  std::shuffle(ranks.begin(), ranks.end(), rng);

  for (int s = 0; s < n; ++s) {
    ShapeSpec shape;
    shape.kind = config.kinds[kind_dist(rng)];
    shape.scale = scale_dist(rng);
    const double reach = std::max(0.0, 1.0 - shape.scale);
    shape.center = {reach * unit(rng), reach * unit(rng)};
    shape.rot = 0.0;
    shape.depth_rank = ranks[static_cast<size_t>(s)];
    if (config.mode == DatasetMode::kGeoPlus) {
      shape.texture_id = std::uniform_int_distribution<int>(0, assets.textures - 1)(rng);
    } else {
      Rgb color = random_color(rng);
      for (int attempt = 0; attempt < 1000 && contrast(color, scene.background) < config.min_contrast;
           ++attempt) {
        color = random_color(rng);
      }
      shape.color = color;
    }
    scene.shapes.push_back(shape);

    SimilarityPose motion;
    motion.tx = 2.0 * shift_dist(rng) / config.width;
    motion.ty = 2.0 * shift_dist(rng) / config.height;
    if (config.max_rotation > 0.0) motion.rot = config.max_rotation * unit(rng);
    if (config.max_log_scale > 0.0) motion.scale = std::exp(config.max_log_scale * unit(rng));
    scene.motions.push_back(motion);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Rendering

bool shape_contains(const ShapeSpec& shape, double x, double y) {
  const BasicPose<double> pose{shape.center.x, shape.center.y, shape.rot, shape.scale};
  const auto local = inverse_apply_point(pose, x, y);
  switch (shape.kind) {
    case ShapeKind::kCircle:
      return local.x * local.x + local.y * local.y <= 1.0;
    case ShapeKind::kSquare:
      return std::abs(local.x) <= 1.0 && std::abs(local.y) <= 1.0;
    case ShapeKind::kTriangle: {
      // Equilateral, circumradius 1, apex at local (0, -1) (image up).
      constexpr double kSqrt3 = 1.7320508075688772;
      return local.y <= 0.5 && kSqrt3 * local.x - local.y <= 1.0 &&
             -kSqrt3 * local.x - local.y <= 1.0;
    }
  }
  return false;
}

namespace {

Rgb sample_background(const Image& bg, int i, int j, int height, int width) {
  // Nearest-neighbour resize with pixel-center alignment.
  const int si = std::min(bg.height - 1, static_cast<int>((i + 0.5) * bg.height / height));
  const int sj = std::min(bg.width - 1, static_cast<int>((j + 0.5) * bg.width / width));
  return {bg.at(si, sj, 0), bg.at(si, sj, 1), bg.at(si, sj, 2)};
}

Rgb sample_texture(const Image& tex, const ShapeSpec& shape, double x, double y,
                   int height, int width) {
  // Texture is attached to the shape frame in pixel units, so it moves rigidly
  // with the shape.
  const BasicPose<double> frame{shape.center.x, shape.center.y, shape.rot, 1.0};
  const auto local = inverse_apply_point(frame, x, y);
  const double px = local.x * width / 2.0 + tex.width / 2.0;
  const double py = local.y * height / 2.0 + tex.height / 2.0;
  auto wrap = [](long v, int n) { return static_cast<int>(((v % n) + n) % n); };
  const int tj = wrap(static_cast<long>(std::floor(px)), tex.width);
  const int ti = wrap(static_cast<long>(std::floor(py)), tex.height);
  return {tex.at(ti, tj, 0), tex.at(ti, tj, 1), tex.at(ti, tj, 2)};
}

}  // namespace

RenderedFrame render_scene(const SceneSpec& scene, int height, int width,
                           const AssetStore& assets) {
  if (height < 1 || width < 1) fail(ErrorCode::kInvalidArgument, "render size must be positive");
  const auto grid = make_grid(height, width);
  RenderedFrame out;
  out.image = Image(height, width, 3);
  const size_t n = scene.shapes.size();

  const Image* bg = nullptr;
  if (scene.background_image_id >= 0) bg = &assets.background(scene.background_image_id);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const Rgb c = bg ? sample_background(*bg, i, j, height, width) : scene.background;
      for (int ch = 0; ch < 3; ++ch) out.image.at(i, j, ch) = c[ch];
    }
  }

  for (const auto& shape : scene.shapes) {
    BinaryMask m(height, width);
    for (int p = 0; p < grid.size(); ++p) {
      m.data[static_cast<size_t>(p)] = shape_contains(shape, grid.x(p), grid.y(p)) ? 1 : 0;
    }
    out.amodal.push_back(std::move(m));
  }

  // Paint far to near.
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return scene.shapes[a].depth_rank < scene.shapes[b].depth_rank;
  });
  std::vector<int> owner(static_cast<size_t>(height) * width, -1);
  for (size_t s : order) {
    const auto& shape = scene.shapes[s];
    const Image* tex = shape.texture_id >= 0 ? &assets.texture(shape.texture_id) : nullptr;
    for (int p = 0; p < grid.size(); ++p) {
      if (!out.amodal[s].data[static_cast<size_t>(p)]) continue;
      owner[static_cast<size_t>(p)] = static_cast<int>(s);
      const int i = p / width;
      const int j = p % width;
      const Rgb c = tex ? sample_texture(*tex, shape, grid.x(p), grid.y(p), height, width)
                        : shape.color;
      for (int ch = 0; ch < 3; ++ch) out.image.at(i, j, ch) = c[ch];
    }
  }

  for (size_t s = 0; s < n; ++s) {
    BinaryMask m(height, width);
    for (size_t p = 0; p < owner.size(); ++p) m.data[p] = owner[p] == static_cast<int>(s) ? 1 : 0;
    out.visible.push_back(std::move(m));
  }
  return out;
}

SceneSpec advance_scene(const SceneSpec& scene) {
  if (scene.motions.size() != scene.shapes.size()) {
    fail(ErrorCode::kInvalidArgument, "scene needs one motion per shape");
  }
  SceneSpec next = scene;
  for (size_t s = 0; s < scene.shapes.size(); ++s) {
    const auto& m = scene.motions[s];
    auto& shape = next.shapes[s];
    shape.center = apply_point(m, shape.center.x, shape.center.y);
    shape.rot = shape.rot + m.rot;
    shape.scale = shape.scale * m.scale;
    next.motions[s] = SimilarityPose{};
  }
  return next;
}

FlowField gt_flow(const SceneSpec& scene, const std::vector<BinaryMask>& visible,
                  int height, int width) {
  if (scene.motions.size() != scene.shapes.size() || visible.size() != scene.shapes.size()) {
    fail(ErrorCode::kInvalidArgument, "gt_flow needs one motion and one mask per shape");
  }
  const auto grid = make_grid(height, width);
  FlowField flow(height, width);
  for (size_t s = 0; s < scene.shapes.size(); ++s) {
    const auto& m = scene.motions[s];
    validate_pose(m);
    for (int p = 0; p < grid.size(); ++p) {
      if (!visible[s].data[static_cast<size_t>(p)]) continue;
      const auto moved = apply_point(m, grid.x(p), grid.y(p));
      flow.data[2 * static_cast<size_t>(p)] =
          static_cast<float>((moved.x - grid.x(p)) * width / 2.0);
      flow.data[2 * static_cast<size_t>(p) + 1] =
          static_cast<float>((moved.y - grid.y(p)) * height / 2.0);
    }
  }
  return flow;
}

FramePairSample make_sample(const SceneSpec& scene, int height, int width,
                            const AssetStore& assets) {
  auto frame_a = render_scene(scene, height, width, assets);
  auto frame_b = render_scene(advance_scene(scene), height, width, assets);
  FramePairSample sample;
  sample.gt_flow = gt_flow(scene, frame_a.visible, height, width);
  sample.image_a = std::move(frame_a.image);
  sample.image_b = std::move(frame_b.image);
  sample.amodal_masks = std::move(frame_a.amodal);
  sample.visible_masks = std::move(frame_a.visible);
  sample.visible_masks_b = std::move(frame_b.visible);
  for (const auto& s : scene.shapes) sample.labels.push_back(s.kind);
  return sample;
}

// ---------------------------------------------------------------------------
// Dataset IO

size_t Manifest::total() const {
  size_t n = 0;
  for (const auto& [name, entries] : splits) n += entries.size();
  return n;
}

json manifest_to_json(const Manifest& manifest) {
  json splits = json::object();
  for (const auto& [name, entries] : manifest.splits) {
    json arr = json::array();
    for (const auto& e : entries) {
      json kinds = json::array();
      for (auto k : e.shapes) kinds.push_back(shape_kind_name(k));
      arr.push_back({{"idx", e.idx}, {"shapes", kinds}, {"seed", e.seed}});
    }
    splits[name] = arr;
  }
  return {{"version", manifest.version},
          {"config_echo", manifest.config_echo},
          {"splits", splits}};
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  try {
    m.version = j.at("version").get<int>();
    m.config_echo = j.at("config_echo");
    for (const auto& [name, arr] : j.at("splits").items()) {
      auto& entries = m.splits[name];
      for (const auto& e : arr) {
        ManifestEntry entry;
        entry.idx = e.at("idx").get<int>();
        entry.seed = e.at("seed").get<uint64_t>();
        for (const auto& k : e.at("shapes")) entry.shapes.push_back(parse_shape_kind(k.get<std::string>()));
        entries.push_back(std::move(entry));
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

Manifest plan_dataset(const GenConfig& config) {
  config.validate();
  Manifest manifest;
  manifest.config_echo = gen_config_to_json(config);
  const std::array<int, 3> sizes = {config.train_size, config.val_size, config.test_size};
  for (size_t s = 0; s < kSplitNames.size(); ++s) {
    auto& entries = manifest.splits[kSplitNames[s]];
    for (int idx = 0; idx < sizes[s]; ++idx) {
      entries.push_back({idx, {}, sample_seed(config.master_seed, kSplitNames[s], idx)});
    }
  }
  return manifest;
}

fs::path sample_path(const fs::path& dir, const std::string& split, int idx,
                     const std::string& suffix) {
  return dir / split / (std::to_string(idx) + "_" + suffix);
}

Manifest write_dataset(const GenConfig& config, const fs::path& out_dir) {
  Manifest manifest = plan_dataset(config);
  AssetStore assets;
  if (config.mode == DatasetMode::kGeoPlus) assets = AssetStore::load(config.assets_dir);
  const AssetCounts counts{assets.num_backgrounds(), assets.num_textures()};

  std::error_code ec;
  for (const auto& split : kSplitNames) {
    fs::create_directories(out_dir / split, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create " + (out_dir / split).string() + ": " + ec.message());
  }
  for (auto& [split, entries] : manifest.splits) {
    for (auto& entry : entries) {
      const auto scene = sample_scene(entry.seed, config, counts);
      const auto sample = make_sample(scene, config.height, config.width, assets);
      entry.shapes = sample.labels;
      write_png(sample_path(out_dir, split, entry.idx, "a.png"), image_to_png(sample.image_a));
      write_png(sample_path(out_dir, split, entry.idx, "b.png"), image_to_png(sample.image_b));
      write_flo(sample_path(out_dir, split, entry.idx, "flow.flo"), sample.gt_flow);
      for (size_t k = 0; k < sample.amodal_masks.size(); ++k) {
        write_png(sample_path(out_dir, split, entry.idx, "amodal_" + std::to_string(k) + ".png"),
                  mask_to_png(sample.amodal_masks[k]));
        write_png(sample_path(out_dir, split, entry.idx, "visible_" + std::to_string(k) + ".png"),
                  mask_to_png(sample.visible_masks[k]));
      }
    }
  }
  const auto text = manifest_to_json(manifest).dump(1);
  write_file_bytes(out_dir / "manifest.json", std::vector<uint8_t>(text.begin(), text.end()));
  return manifest;
}

Manifest read_manifest(const fs::path& dataset_dir) {
  const auto path = dataset_dir / "manifest.json";
  const auto bytes = read_file_bytes(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

FramePairSample read_sample(const fs::path& dir, const std::string& split,
                            const ManifestEntry& entry) {
  FramePairSample s;
  s.image_a = png_to_image(read_png(sample_path(dir, split, entry.idx, "a.png"), 3));
  s.image_b = png_to_image(read_png(sample_path(dir, split, entry.idx, "b.png"), 3));
  s.gt_flow = read_flo(sample_path(dir, split, entry.idx, "flow.flo"));
  for (size_t k = 0; k < entry.shapes.size(); ++k) {
    s.amodal_masks.push_back(png_to_mask(read_png(
        sample_path(dir, split, entry.idx, "amodal_" + std::to_string(k) + ".png"), 1)));
    s.visible_masks.push_back(png_to_mask(read_png(
        sample_path(dir, split, entry.idx, "visible_" + std::to_string(k) + ".png"), 1)));
  }
  s.labels = entry.shapes;
  return s;
}

}  // namespace flowparts
