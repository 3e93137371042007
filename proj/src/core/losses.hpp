#pragma once

// Self-supervised objective:
//   total = render + w_center * center + w_smooth * smooth
// render: MSE between frame a and frame b warped back along the composed flow.
// center: squared distance of each capsule's canonical mask centroid from the
//         canonical origin, summed over capsules.
// smooth: mean squared forward difference of the flow along x plus along y.

#include <nlohmann/json.hpp>

#include <span>
#include <vector>

#include "model.hpp"

namespace flowparts {

struct LossWeights {
  double center = 1e-2;
  double smooth = 1e-4;
};

struct LossOptions {
  LossWeights weights;
  // Side of the canonical grid over [-1, 1]^2 used by the center term.
  int center_grid = 16;
};

LossOptions loss_options_from_json(const nlohmann::json& j, LossOptions base = {});
nlohmann::json loss_options_to_json(const LossOptions& options);

struct LossBreakdown {
  double render = 0.0;
  double center = 0.0;
  double smooth = 0.0;
  double total = 0.0;
};

inline constexpr double kCenterEps = 1e-6;

template <typename T>
T render_loss(const std::vector<T>& image_a, const std::vector<T>& image_b, int height,
              int width, int channels, const std::vector<T>& flow, std::vector<T>* dflow);

template <typename T>
T center_loss(const std::vector<T>& canonical_masks, const CoordGrid& canonical_grid,
              std::vector<T>* dmasks);

template <typename T>
T smooth_loss(const std::vector<T>& flow, int height, int width, std::vector<T>* dflow);

struct FramePair {
  const Image* image_a = nullptr;
  const Image* image_b = nullptr;
};

// Mean loss over the batch; accumulates d(mean total)/d(params) into `grads`
// when non-null. Both frames go through the same encoder weights.
template <typename T>
LossBreakdown total_loss(const FlowCapsuleModel<T>& model, std::span<const FramePair> batch,
                         const LossOptions& options, GradSet<T>* grads);

}  // namespace flowparts
