#include "geometry.hpp"

#include <numbers>
#include <string>

namespace flowparts {

void validate_pose(const SimilarityPose& pose) {
  if (!std::isfinite(pose.tx) || !std::isfinite(pose.ty) ||
      !std::isfinite(pose.rot) || !std::isfinite(pose.scale)) {
    fail(ErrorCode::kInvalidArgument, "pose has non-finite component");
  }
  if (!(pose.scale > 0.0)) {
    fail(ErrorCode::kInvalidArgument,
         "pose scale must be positive, got " + std::to_string(pose.scale));
  }
}

double wrap_angle(double radians) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double r = std::fmod(radians, kTwoPi);
  if (r <= -std::numbers::pi) r += kTwoPi;
  if (r > std::numbers::pi) r -= kTwoPi;
  return r;
}

PoseMatrix pose_to_matrix(const SimilarityPose& pose) {
  validate_pose(pose);
  const double c = pose.scale * std::cos(pose.rot);
  const double s = pose.scale * std::sin(pose.rot);
  PoseMatrix m;
  m << c, -s, pose.tx,
       s, c, pose.ty,
       0.0, 0.0, 1.0;
  return m;
}

SimilarityPose pose_inverse(const SimilarityPose& pose) {
  if (!std::isfinite(pose.tx) || !std::isfinite(pose.ty) ||
      !std::isfinite(pose.rot) || !std::isfinite(pose.scale)) {
    fail(ErrorCode::kInvalidArgument, "pose has non-finite component");
  }
  if (pose.scale <= kDegenerateScale) {
    fail(ErrorCode::kDegeneratePose,
         "cannot invert pose with scale " + std::to_string(pose.scale));
  }
  const auto t = inverse_apply_point(pose, 0.0, 0.0);
  return {t.x, t.y, -pose.rot, 1.0 / pose.scale};
}

SimilarityPose compose(const SimilarityPose& a, const SimilarityPose& b) {
  validate_pose(a);
  validate_pose(b);
  const auto t = apply_point(a, b.tx, b.ty);
  return {t.x, t.y, wrap_angle(a.rot + b.rot), a.scale * b.scale};
}

std::vector<Vec2<double>> apply(const SimilarityPose& pose,
                                std::span<const Vec2<double>> points) {
  validate_pose(pose);
  std::vector<Vec2<double>> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      fail(ErrorCode::kInvalidArgument, "non-finite point");
    }
    out.push_back(apply_point(pose, p.x, p.y));
  }
  return out;
}

CoordGrid make_grid(int height, int width) {
  if (height < 1 || width < 1) {
    fail(ErrorCode::kInvalidArgument,
         "grid dimensions must be positive, got " + std::to_string(height) +
             "x" + std::to_string(width));
  }
  CoordGrid grid;
  grid.height = height;
  grid.width = width;
  grid.coords.resize(static_cast<size_t>(height) * width * 2);
  for (int i = 0; i < height; ++i) {
    const double y = (2.0 * i + 1.0) / height - 1.0;
    for (int j = 0; j < width; ++j) {
      const size_t idx = (static_cast<size_t>(i) * width + j) * 2;
      grid.coords[idx] = (2.0 * j + 1.0) / width - 1.0;
      grid.coords[idx + 1] = y;
    }
  }
  return grid;
}

}  // namespace flowparts
