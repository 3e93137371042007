#pragma once

// Procedural Geo / Geo+ frame-pair generation with exact ground truth.
//
// Shapes are rasterized by analytic inside tests at pixel centers, so masks
// are binary and flow is exact. Geo motions are integer-pixel translations,
// which makes the second frame an exact re-rendering of the first under the
// ground-truth flow wherever nothing is disoccluded.

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "image.hpp"

namespace flowparts {

enum class ShapeKind { kCircle = 0, kSquare = 1, kTriangle = 2 };
inline constexpr int kNumShapeKinds = 3;

const char* shape_kind_name(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& name);

enum class DatasetMode { kGeo, kGeoPlus };

using Rgb = std::array<float, 3>;

struct GenConfig {
  DatasetMode mode = DatasetMode::kGeo;
  int height = 64;
  int width = 64;
  int min_shapes = 1;
  int max_shapes = 3;
  std::vector<ShapeKind> kinds = {ShapeKind::kCircle, ShapeKind::kSquare,
                                  ShapeKind::kTriangle};
  // Circumradius in normalized units (the image half-width is 1).
  double scale_min = 0.15;
  double scale_max = 0.4;
  int max_translation_px = 6;
  // Non-zero only for test scenes; Geo proper is translation-only.
  double max_rotation = 0.0;
  double max_log_scale = 0.0;
  double min_contrast = 0.1;
  int train_size = 100000;
  int val_size = 1000;
  int test_size = 10000;
  uint64_t master_seed = 0;
  std::filesystem::path assets_dir;

  void validate() const;
};

GenConfig gen_config_from_json(const nlohmann::json& j);
nlohmann::json gen_config_to_json(const GenConfig& config);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::kCircle;
  Vec2<double> center;
  double scale = 0.25;
  double rot = 0.0;
  Rgb color = {1.0f, 1.0f, 1.0f};
  int texture_id = -1;  // Geo+ only
  int depth_rank = 0;   // larger = nearer
};

struct SceneSpec {
  std::vector<ShapeSpec> shapes;
  Rgb background = {0.0f, 0.0f, 0.0f};
  int background_image_id = -1;  // Geo+ only
  std::vector<SimilarityPose> motions;  // frame-1 -> frame-2, per shape
};

// Background and texture images for Geo+, loaded from
// `<assets>/backgrounds/*.png` and `<assets>/textures/*.png`.
class AssetStore {
 public:
  AssetStore() = default;
  static AssetStore load(const std::filesystem::path& dir);

  bool empty() const { return backgrounds_.empty() && textures_.empty(); }
  int num_backgrounds() const { return static_cast<int>(backgrounds_.size()); }
  int num_textures() const { return static_cast<int>(textures_.size()); }
  const Image& background(int id) const;
  const Image& texture(int id) const;

  void add_background(Image image) { backgrounds_.push_back(std::move(image)); }
  void add_texture(Image image) { textures_.push_back(std::move(image)); }

 private:
  std::vector<Image> backgrounds_;
  std::vector<Image> textures_;
};

struct RenderedFrame {
  Image image;
  std::vector<BinaryMask> amodal;   // per shape, in scene order
  std::vector<BinaryMask> visible;  // per shape, in scene order
};

struct FramePairSample {
  Image image_a;
  Image image_b;
  FlowField gt_flow;
  std::vector<BinaryMask> amodal_masks;   // frame a
  std::vector<BinaryMask> visible_masks;  // frame a
  std::vector<BinaryMask> visible_masks_b;
  std::vector<ShapeKind> labels;
};

// Counts are needed up front for Geo+ id sampling.
struct AssetCounts {
  int backgrounds = 0;
  int textures = 0;
};

SceneSpec sample_scene(uint64_t seed, const GenConfig& config,
                       AssetCounts assets = {});

bool shape_contains(const ShapeSpec& shape, double x, double y);

RenderedFrame render_scene(const SceneSpec& scene, int height, int width,
                           const AssetStore& assets);

// Scene as seen in the second frame: every shape moved by its motion.
SceneSpec advance_scene(const SceneSpec& scene);

FlowField gt_flow(const SceneSpec& scene, const std::vector<BinaryMask>& visible,
                  int height, int width);

FramePairSample make_sample(const SceneSpec& scene, int height, int width,
                            const AssetStore& assets);

uint64_t sample_seed(uint64_t master_seed, const std::string& split, int idx);

struct ManifestEntry {
  int idx = 0;
  std::vector<ShapeKind> shapes;
  uint64_t seed = 0;
};

struct Manifest {
  int version = 1;
  nlohmann::json config_echo;
  std::map<std::string, std::vector<ManifestEntry>> splits;

  size_t total() const;
};

inline const std::array<std::string, 3> kSplitNames = {"train", "val", "test"};

nlohmann::json manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const nlohmann::json& j);

// Builds the manifest without touching the filesystem.
Manifest plan_dataset(const GenConfig& config);
Manifest write_dataset(const GenConfig& config, const std::filesystem::path& out_dir);

Manifest read_manifest(const std::filesystem::path& dataset_dir);

// On-disk sample paths.
std::filesystem::path sample_path(const std::filesystem::path& dir,
                                  const std::string& split, int idx,
                                  const std::string& suffix);

FramePairSample read_sample(const std::filesystem::path& dataset_dir,
                            const std::string& split, const ManifestEntry& entry);

}  // namespace flowparts
