#pragma once

// SIM(2) pose algebra in the normalized image frame [-1, 1]^2.
//
// A pose maps part-centric (canonical) coordinates v to image coordinates
// u = P v with
//
//   P = [ s cos(r)  -s sin(r)  tx ]
//       [ s sin(r)   s cos(r)  ty ]
//       [    0          0       1 ]
//
// The templated point helpers carry their own Jacobians so the model can
// backpropagate through pose application without an autodiff layer.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "error.hpp"

namespace flowparts {

template <typename T>
struct BasicPose {
  T tx = T(0);
  T ty = T(0);
  T rot = T(0);
  T scale = T(1);
};

using SimilarityPose = BasicPose<double>;

template <typename U, typename T>
BasicPose<U> pose_cast(const BasicPose<T>& p) {
  return {static_cast<U>(p.tx), static_cast<U>(p.ty), static_cast<U>(p.rot), static_cast<U>(p.scale)};
}
using PoseMatrix = Eigen::Matrix3d;

template <typename T>
struct Vec2 {
  T x = T(0);
  T y = T(0);
};

// d(output)/d(tx, ty, rot, scale), row-major 2x4.
template <typename T>
using PoseJacobian = std::array<T, 8>;

inline constexpr double kDegenerateScale = 1e-8;

// Pixel-center grid in the normalized frame, row-major, x fastest.
struct CoordGrid {
  int height = 0;
  int width = 0;
  std::vector<double> coords;  // height * width * 2, interleaved (x, y)

  int size() const { return height * width; }
  double x(int i) const { return coords[2 * i]; }
  double y(int i) const { return coords[2 * i + 1]; }
};

void validate_pose(const SimilarityPose& pose);

PoseMatrix pose_to_matrix(const SimilarityPose& pose);
SimilarityPose pose_inverse(const SimilarityPose& pose);
SimilarityPose compose(const SimilarityPose& a, const SimilarityPose& b);
std::vector<Vec2<double>> apply(const SimilarityPose& pose,
                                std::span<const Vec2<double>> points);
CoordGrid make_grid(int height, int width);

// Wraps an angle into (-pi, pi].
double wrap_angle(double radians);

template <typename T>
inline Vec2<T> apply_point(const BasicPose<T>& p, T x, T y) {
  const T c = p.scale * std::cos(p.rot);
  const T s = p.scale * std::sin(p.rot);
  return {c * x - s * y + p.tx, s * x + c * y + p.ty};
}

template <typename T>
inline PoseJacobian<T> apply_point_jacobian(const BasicPose<T>& p, T x, T y) {
  const T cr = std::cos(p.rot);
  const T sr = std::sin(p.rot);
  // Rotated (unscaled) point.
  const T rx = cr * x - sr * y;
  const T ry = sr * x + cr * y;
  return {T(1), T(0), -p.scale * ry, rx,
          T(0), T(1), p.scale * rx, ry};
}

// v = P^{-1} u = R(-r) (u - t) / s
template <typename T>
inline Vec2<T> inverse_apply_point(const BasicPose<T>& p, T x, T y) {
  const T cr = std::cos(p.rot);
  const T sr = std::sin(p.rot);
  const T dx = x - p.tx;
  const T dy = y - p.ty;
  return {(cr * dx + sr * dy) / p.scale, (-sr * dx + cr * dy) / p.scale};
}

template <typename T>
inline PoseJacobian<T> inverse_apply_point_jacobian(const BasicPose<T>& p,
                                                    T x, T y) {
  const T cr = std::cos(p.rot);
  const T sr = std::sin(p.rot);
  const T inv = T(1) / p.scale;
  const T dx = x - p.tx;
  const T dy = y - p.ty;
  const T vx = (cr * dx + sr * dy) * inv;
  const T vy = (-sr * dx + cr * dy) * inv;
  return {-cr * inv, -sr * inv, vy, -vx * inv,
          sr * inv, -cr * inv, -vx, -vy * inv};
}

// 2x2 linear part of P, row-major.
template <typename T>
inline std::array<T, 4> pose_linear(const BasicPose<T>& p) {
  const T c = p.scale * std::cos(p.rot);
  const T s = p.scale * std::sin(p.rot);
  return {c, -s, s, c};
}

}  // namespace flowparts
