#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "test_support.hpp"

using namespace flowparts;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInternal;
}

ShapeSpec make_shape(ShapeKind kind, double cx, double cy, double scale, int rank, Rgb color) {
  ShapeSpec s;
  s.kind = kind;
  s.center = {cx, cy};
  s.scale = scale;
  s.depth_rank = rank;
  s.color = color;
  return s;
}

bool same_scene(const SceneSpec& a, const SceneSpec& b) {
  if (a.shapes.size() != b.shapes.size() || a.background != b.background) return false;
  for (size_t i = 0; i < a.shapes.size(); ++i) {
    const auto& x = a.shapes[i];
    const auto& y = b.shapes[i];
    if (x.kind != y.kind || x.center.x != y.center.x || x.center.y != y.center.y ||
        x.scale != y.scale || x.rot != y.rot || x.color != y.color || x.depth_rank != y.depth_rank) {
      return false;
    }
    const auto& m = a.motions[i];
    const auto& n = b.motions[i];
    if (m.tx != n.tx || m.ty != n.ty || m.rot != n.rot || m.scale != n.scale) return false;
  }
  return true;
}

// Fraction of foreground pixels of frame a, whose target stays on the same
// shape in frame b, where image_b(u + flow) == image_a(u). Integer flows only.
struct ConstancyCount {
  long checked = 0;
  long matched = 0;
};

ConstancyCount brightness_constancy(const FramePairSample& s) {
  ConstancyCount c;
  const int h = s.image_a.height;
  const int w = s.image_a.width;
  for (size_t k = 0; k < s.visible_masks.size(); ++k) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const size_t p = static_cast<size_t>(i) * w + j;
        if (!s.visible_masks[k].data[p]) continue;
        const int tj = j + static_cast<int>(std::lround(s.gt_flow.u(i, j)));
        const int ti = i + static_cast<int>(std::lround(s.gt_flow.v(i, j)));
        if (ti < 0 || tj < 0 || ti >= h || tj >= w) continue;
        if (!s.visible_masks_b[k].data[static_cast<size_t>(ti) * w + tj]) continue;
        ++c.checked;
        bool eq = true;
        for (int ch = 0; ch < 3; ++ch) {
          eq = eq && std::abs(s.image_b.at(ti, tj, ch) - s.image_a.at(i, j, ch)) <= 0.5f / 255.0f;
        }
        c.matched += eq;
      }
    }
  }
  return c;
}

void write_solid_png(const std::filesystem::path& path, int h, int w, uint64_t seed) {
  std::mt19937_64 rng(seed);
  PngData png{h, w, 3, std::vector<uint8_t>(static_cast<size_t>(h) * w * 3)};
  for (auto& b : png.bytes) b = static_cast<uint8_t>(rng() & 0xff);
  write_png(path, png);
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("sample_scene is deterministic in its seed") {
  const GenConfig cfg;
  CHECK(same_scene(sample_scene(0, cfg), sample_scene(0, cfg)));
  CHECK(same_scene(sample_scene(12345, cfg), sample_scene(12345, cfg)));
  CHECK_FALSE(same_scene(sample_scene(1, cfg), sample_scene(2, cfg)));
}

TEST_CASE("config restricted to one circle yields one circle") {
  GenConfig cfg;
  cfg.min_shapes = cfg.max_shapes = 1;
  cfg.kinds = {ShapeKind::kCircle};
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto scene = sample_scene(seed, cfg);
    REQUIRE(scene.shapes.size() == 1);
    CHECK(scene.shapes[0].kind == ShapeKind::kCircle);
  }
}

TEST_CASE("shape kind frequencies are uniform within 3 sigma") {
  const GenConfig cfg;
  std::array<long, 3> counts{};
  long total = 0;
  for (uint64_t seed = 0; seed < 10000; ++seed) {
    for (const auto& s : sample_scene(seed, cfg).shapes) {
      ++counts[static_cast<size_t>(s.kind)];
      ++total;
    }
  }
  const double p = 1.0 / 3.0;
  const double sigma = std::sqrt(total * p * (1 - p));
  for (long c : counts) CHECK(std::abs(c - total * p) < 3.0 * sigma);
}

TEST_CASE("sampled scenes respect configured ranges") {
  GenConfig cfg;
  cfg.scale_min = 0.2;
  cfg.scale_max = 0.3;
  cfg.max_translation_px = 4;
  for (uint64_t seed = 0; seed < 300; ++seed) {
    const auto scene = sample_scene(seed, cfg);
    CHECK(scene.shapes.size() >= 1);
    CHECK(scene.shapes.size() <= 3);
    REQUIRE(scene.motions.size() == scene.shapes.size());
    std::vector<int> ranks;
    for (size_t i = 0; i < scene.shapes.size(); ++i) {
      const auto& s = scene.shapes[i];
      CHECK(s.scale >= 0.2);
      CHECK(s.scale <= 0.3);
      ranks.push_back(s.depth_rank);
      float contrast = 0.0f;
      for (int c = 0; c < 3; ++c) {
        CHECK(s.color[c] >= 0.0f);
        CHECK(s.color[c] <= 1.0f);
        contrast = std::max(contrast, std::abs(s.color[c] - scene.background[c]));
      }
      CHECK(contrast >= static_cast<float>(cfg.min_contrast));
      // Geo motions: pure integer-pixel translations.
      const auto& m = scene.motions[i];
      CHECK(m.rot == 0.0);
      CHECK(m.scale == 1.0);
      const double px = m.tx * cfg.width / 2.0;
      const double py = m.ty * cfg.height / 2.0;
      CHECK(std::abs(px - std::round(px)) < 1e-9);
      CHECK(std::abs(py - std::round(py)) < 1e-9);
      CHECK(std::abs(px) <= 4.0 + 1e-9);
      CHECK(std::abs(py) <= 4.0 + 1e-9);
    }
    std::sort(ranks.begin(), ranks.end());
    for (size_t i = 0; i < ranks.size(); ++i) CHECK(ranks[i] == static_cast<int>(i));
  }
}

TEST_CASE("invalid generator configs are rejected") {
  GenConfig cfg;
  cfg.scale_min = 0.5;
  cfg.scale_max = 0.2;
  CHECK(code_of([&] { sample_scene(0, cfg); }) == ErrorCode::kConfig);
  cfg = GenConfig{};
  cfg.min_shapes = 0;
  CHECK(code_of([&] { sample_scene(0, cfg); }) == ErrorCode::kConfig);
  cfg = GenConfig{};
  cfg.kinds.clear();
  CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::kConfig);
  CHECK(code_of([] { gen_config_from_json({{"mode", "video"}}); }) == ErrorCode::kConfig);
  CHECK(code_of([] { gen_config_from_json({{"height", "tall"}}); }) == ErrorCode::kConfig);
  CHECK(code_of([] { gen_config_from_json({{"mode", "geo_plus"}}); }) == ErrorCode::kConfig);
}

TEST_CASE("empty scene renders the background") {
  SceneSpec scene;
  scene.background = {0.2f, 0.4f, 0.6f};
  const auto f = render_scene(scene, 8, 8, {});
  CHECK(f.amodal.empty());
  CHECK(f.visible.empty());
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      CHECK(f.image.at(i, j, 0) == 0.2f);
      CHECK(f.image.at(i, j, 1) == 0.4f);
      CHECK(f.image.at(i, j, 2) == 0.6f);
    }
  }
}

TEST_CASE("a lone square is fully visible") {
  SceneSpec scene;
  scene.shapes.push_back(make_shape(ShapeKind::kSquare, 0.1, -0.2, 0.3, 0, {1, 0, 0}));
  scene.motions.emplace_back();
  const auto f = render_scene(scene, 32, 32, {});
  CHECK(f.visible[0].data == f.amodal[0].data);
  CHECK(f.amodal[0].count() > 0);
  long expected = 0;
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) {
      const bool in = std::abs(fpt::pixel_center(j, 32) - 0.1) <= 0.3 &&
                      std::abs(fpt::pixel_center(i, 32) + 0.2) <= 0.3;
      expected += in;
      CHECK(f.amodal[0].data[static_cast<size_t>(i) * 32 + j] == in);
    }
  }
  CHECK(f.amodal[0].count() == expected);
}

TEST_CASE("occluded far shape loses exactly the near shape's pixels") {
  SceneSpec scene;
  scene.shapes.push_back(make_shape(ShapeKind::kCircle, -0.1, 0.0, 0.4, 0, {1, 0, 0}));
  scene.shapes.push_back(make_shape(ShapeKind::kSquare, 0.2, 0.1, 0.3, 1, {0, 1, 0}));
  scene.motions.resize(2);
  const auto f = render_scene(scene, 32, 32, {});
  long overlap = 0;
  for (size_t p = 0; p < f.amodal[0].data.size(); ++p) {
    const bool far = f.amodal[0].data[p], near = f.amodal[1].data[p];
    CHECK(f.visible[0].data[p] == (far && !near));
    CHECK(f.visible[1].data[p] == near);
    overlap += far && near;
  }
  CHECK(overlap > 0);
}

TEST_CASE("shape inside tests") {
  const auto circle = make_shape(ShapeKind::kCircle, 0, 0, 0.5, 0, {});
  CHECK(shape_contains(circle, 0.49, 0.0));
  CHECK_FALSE(shape_contains(circle, 0.36, 0.36));
  const auto square = make_shape(ShapeKind::kSquare, 0, 0, 0.5, 0, {});
  CHECK(shape_contains(square, 0.49, 0.49));
  CHECK_FALSE(shape_contains(square, 0.51, 0.0));
  const auto tri = make_shape(ShapeKind::kTriangle, 0, 0, 0.5, 0, {});
  CHECK(shape_contains(tri, 0.0, -0.49));  // apex points up
  CHECK_FALSE(shape_contains(tri, 0.0, 0.49));
  CHECK(shape_contains(tri, 0.0, 0.24));
  CHECK(shape_contains(tri, 0.4, 0.24));
  CHECK_FALSE(shape_contains(tri, 0.45, 0.0));
}

TEST_CASE("gt_flow examples") {
  SceneSpec scene;
  scene.shapes.push_back(make_shape(ShapeKind::kSquare, 0, 0, 0.4, 0, {1, 1, 1}));
  scene.motions.emplace_back();
  const int h = 16, w = 16;
  auto f = render_scene(scene, h, w, {});
  const auto zero = gt_flow(scene, f.visible, h, w);
  for (float v : zero.data) CHECK(v == 0.0f);

  scene.motions[0].tx = 2.0 * 3 / w;  // 3 px right
  const auto shifted = gt_flow(scene, f.visible, h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const bool vis = f.visible[0].data[static_cast<size_t>(i) * w + j];
      CHECK(shifted.u(i, j) == doctest::Approx(vis ? 3.0 : 0.0));
      CHECK(shifted.v(i, j) == 0.0f);
    }
  }
}

TEST_CASE("rotational motion flow matches per-pixel matrix application") {
  SceneSpec scene;
  scene.shapes.push_back(make_shape(ShapeKind::kCircle, 0.1, 0.05, 0.6, 0, {1, 1, 1}));
  scene.motions.push_back({0.05, -0.1, 0.3, 1.1});
  const int h = 20, w = 24;
  const auto f = render_scene(scene, h, w, {});
  const auto flow = gt_flow(scene, f.visible, h, w);
  const auto m = fpt::oracle_matrix(0.05, -0.1, 0.3, 1.1);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const Eigen::Vector3d u(fpt::pixel_center(j, w), fpt::pixel_center(i, h), 1.0);
      const Eigen::Vector3d moved = m * u;
      const bool vis = f.visible[0].data[static_cast<size_t>(i) * w + j];
      CHECK(flow.u(i, j) == doctest::Approx(vis ? (moved.x() - u.x()) * w / 2 : 0.0).epsilon(1e-6));
      CHECK(flow.v(i, j) == doctest::Approx(vis ? (moved.y() - u.y()) * h / 2 : 0.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("sample invariants over many generated pairs") {
  GenConfig cfg;
  cfg.height = cfg.width = 32;
  long checked = 0, matched = 0;
  for (int idx = 0; idx < 200; ++idx) {
    const auto scene = sample_scene(sample_seed(7, "train", idx), cfg);
    const auto s = make_sample(scene, 32, 32, {});
    const size_t n = s.image_a.data.size() / 3;
    std::vector<int> owners(n, 0);
    for (size_t k = 0; k < s.visible_masks.size(); ++k) {
      // Per-shape flow is constant on its visible pixels.
      std::set<std::pair<float, float>> values;
      for (size_t p = 0; p < n; ++p) {
        CHECK((!s.visible_masks[k].data[p] || s.amodal_masks[k].data[p]));
        owners[p] += s.visible_masks[k].data[p];
        if (s.visible_masks[k].data[p]) {
          values.insert({s.gt_flow.data[2 * p], s.gt_flow.data[2 * p + 1]});
        }
      }
      CHECK(values.size() <= 1);
    }
    for (size_t p = 0; p < n; ++p) {
      CHECK(owners[p] <= 1);  // disjoint visible masks
      if (owners[p] == 0) {
        CHECK(s.gt_flow.data[2 * p] == 0.0f);
        CHECK(s.gt_flow.data[2 * p + 1] == 0.0f);
      }
    }
    const auto c = brightness_constancy(s);
    checked += c.checked;
    matched += c.matched;
  }
  REQUIRE(checked > 0);
  CHECK(static_cast<double>(matched) / static_cast<double>(checked) >= 0.99);
}

TEST_CASE("sample seeds are pure in (master, split, index)") {
  CHECK(sample_seed(1, "train", 5) == sample_seed(1, "train", 5));
  CHECK(sample_seed(1, "train", 5) != sample_seed(1, "train", 6));
  CHECK(sample_seed(1, "train", 5) != sample_seed(1, "val", 5));
  CHECK(sample_seed(1, "train", 5) != sample_seed(2, "train", 5));
}

TEST_CASE("write_dataset: counts, determinism and read-back") {
  fpt::TempDir dir("gen");
  auto cfg = fpt::small_geo_config(24, 10, 2, 2, 99);
  const auto manifest = write_dataset(cfg, dir.path() / "a");
  CHECK(manifest.total() == 14);
  CHECK(manifest.splits.size() == 3);
  CHECK(manifest.splits.at("train").size() == 10);
  CHECK(manifest.splits.at("val").size() == 2);
  CHECK(manifest.splits.at("test").size() == 2);

  const auto on_disk = read_manifest(dir.path() / "a");
  CHECK(manifest_to_json(on_disk) == manifest_to_json(manifest));
  CHECK(on_disk.config_echo == gen_config_to_json(cfg));

  write_dataset(cfg, dir.path() / "b");
  for (const auto& [split, entries] : manifest.splits) {
    for (const auto& e : entries) {
      CHECK(read_file_bytes(sample_path(dir.path() / "a", split, e.idx, "flow.flo")) ==
            read_file_bytes(sample_path(dir.path() / "b", split, e.idx, "flow.flo")));
    }
  }

  // Samples regenerated out of order, one at a time, match the files.
  const auto& train = manifest.splits.at("train");
  for (auto it = train.rbegin(); it != train.rend(); ++it) {
    const auto scene = sample_scene(sample_seed(99, "train", it->idx), cfg);
    const auto mem = make_sample(scene, cfg.height, cfg.width, {});
    const auto disk = read_sample(dir.path() / "a", "train", *it);
    CHECK(encode_flo(mem.gt_flow) ==
          read_file_bytes(sample_path(dir.path() / "a", "train", it->idx, "flow.flo")));
    CHECK(disk.gt_flow.data == mem.gt_flow.data);
    REQUIRE(disk.image_a.data.size() == mem.image_a.data.size());
    for (size_t i = 0; i < mem.image_a.data.size(); ++i) {
      CHECK(std::abs(disk.image_a.data[i] - mem.image_a.data[i]) <= 0.5f / 255.0f);
      CHECK(std::abs(disk.image_b.data[i] - mem.image_b.data[i]) <= 0.5f / 255.0f);
    }
    REQUIRE(disk.amodal_masks.size() == mem.amodal_masks.size());
    for (size_t k = 0; k < mem.amodal_masks.size(); ++k) {
      CHECK(disk.amodal_masks[k].data == mem.amodal_masks[k].data);
      CHECK(disk.visible_masks[k].data == mem.visible_masks[k].data);
    }
    CHECK(disk.labels == mem.labels);
  }
}

TEST_CASE("plan_dataset agrees with write_dataset without touching disk") {
  auto cfg = fpt::small_geo_config(16, 3, 1, 2, 4);
  const auto plan = plan_dataset(cfg);
  CHECK(plan.total() == 6);
  fpt::TempDir dir("plan");
  const auto written = write_dataset(cfg, dir.path());
  for (const auto& [split, entries] : plan.splits) {
    for (size_t i = 0; i < entries.size(); ++i) {
      CHECK(entries[i].seed == written.splits.at(split)[i].seed);
      CHECK(entries[i].idx == written.splits.at(split)[i].idx);
    }
  }
}

TEST_CASE("Geo+ needs assets and renders them") {
  fpt::TempDir dir("assets");
  GenConfig cfg = fpt::small_geo_config(24, 4, 1, 1, 5);
  cfg.mode = DatasetMode::kGeoPlus;
  cfg.assets_dir = dir.path() / "missing";
  CHECK(code_of([&] { write_dataset(cfg, dir.path() / "out"); }) == ErrorCode::kAsset);
  CHECK(code_of([&] { sample_scene(0, cfg, {}); }) == ErrorCode::kAsset);

  std::filesystem::create_directories(dir.path() / "assets" / "backgrounds");
  std::filesystem::create_directories(dir.path() / "assets" / "textures");
  CHECK(code_of([&] { AssetStore::load(dir.path() / "assets"); }) == ErrorCode::kAsset);
  write_solid_png(dir.path() / "assets" / "backgrounds" / "bg0.png", 40, 50, 1);
  write_solid_png(dir.path() / "assets" / "textures" / "t0.png", 16, 16, 2);
  write_solid_png(dir.path() / "assets" / "textures" / "t1.png", 12, 20, 3);
  cfg.assets_dir = dir.path() / "assets";
  const auto store = AssetStore::load(cfg.assets_dir);
  CHECK(store.num_backgrounds() == 1);
  CHECK(store.num_textures() == 2);

  long checked = 0, matched = 0;
  for (int idx = 0; idx < 40; ++idx) {
    const auto scene = sample_scene(sample_seed(5, "train", idx), cfg, {1, 2});
    CHECK(scene.background_image_id == 0);
    for (const auto& s : scene.shapes) {
      CHECK(s.texture_id >= 0);
      CHECK(s.texture_id < 2);
    }
    const auto s = make_sample(scene, 24, 24, store);
    const auto c = brightness_constancy(s);
    checked += c.checked;
    matched += c.matched;
  }
  REQUIRE(checked > 0);
  CHECK(static_cast<double>(matched) / static_cast<double>(checked) >= 0.99);

  const auto manifest = write_dataset(cfg, dir.path() / "out");
  CHECK(manifest.total() == 6);
  CHECK(std::filesystem::exists(dir.path() / "out" / "train" / "0_a.png"));
}

}  // TEST_SUITE
