#pragma once

// Capsule encoder, implicit mask decoder, depth-softmax visibility and
// pose-parametric flow.
//
// Each capsule is laid out in the encoder output as
//   [ shape code (C - 5) | tx_raw ty_raw rot scale_raw | depth ]
// with tx = tanh(tx_raw), ty = tanh(ty_raw), scale = exp(scale_raw).

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

#include "geometry.hpp"
#include "image.hpp"
#include "nn.hpp"

namespace flowparts {

struct ModelConfig {
  int num_capsules = 8;   // K
  int capsule_dim = 32;   // C
  int height = 64;
  int width = 64;
  std::vector<int> encoder_channels = {32, 64, 128, 256, 256};
  int encoder_groups = 8;
  int encoder_hidden = 256;
  int decoder_width = 64;
  int decoder_depth = 4;
  // false replaces the depth softmax with uniform 1/K weights (ablation).
  bool occlusion = true;

  int shape_dim() const { return capsule_dim - 5; }
  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

template <typename T>
struct Capsule {
  std::vector<T> shape_code;
  BasicPose<T> pose;
  T depth_logit = T(0);
};

template <typename T>
using CapsuleSet = std::vector<Capsule<T>>;

template <typename T>
struct CapsuleGrad {
  std::vector<T> shape_code;
  T tx = T(0);
  T ty = T(0);
  T rot = T(0);
  T scale = T(0);
  T depth_logit = T(0);
};

template <typename T>
std::vector<CapsuleGrad<T>> zero_capsule_grads(int num_capsules, int shape_dim);

template <typename T>
CapsuleSet<T> capsules_from_raw(const std::vector<T>& raw, int num_capsules, int capsule_dim);

template <typename T>
void capsules_backward(const std::vector<T>& raw, const std::vector<CapsuleGrad<T>>& dcaps,
                       int capsule_dim, std::vector<T>& draw);

// Channel-major copy of an interleaved image.
template <typename T>
std::vector<T> image_to_chw(const Image& image);

template <typename T>
class CapsuleEncoder {
 public:
  struct Cache {
    std::vector<typename Conv2d<T>::Cache> conv;
    std::vector<typename GroupNorm<T>::Cache> norm;
    std::vector<std::vector<T>> activations;  // post-ReLU, one per block
    std::vector<int> spatial;
    std::vector<T> hidden;  // post-ReLU FC activations
  };

  CapsuleEncoder() = default;
  CapsuleEncoder(ParamSet<T>& params, const ModelConfig& config);

  void init(ParamSet<T>& params, std::mt19937_64& rng) const;
  void forward(const ParamSet<T>& params, const std::vector<T>& image_chw,
               std::vector<T>& raw, Cache& cache) const;
  void backward(const ParamSet<T>& params, const Cache& cache, const std::vector<T>& draw,
                GradSet<T>& grads) const;

 private:
  ModelConfig config_;
  std::vector<Conv2d<T>> convs_;
  std::vector<GroupNorm<T>> norms_;
  Linear<T> fc_hidden_;
  Linear<T> fc_out_;
};

// Pointwise MLP D(v; s) -> (0, 1). The decoder never sees the pose.
template <typename T>
class MaskDecoder {
 public:
  struct Cache {
    std::vector<T> points;  // interleaved (x, y)
    std::vector<T> shape_code;
    std::vector<std::vector<T>> activations;  // width x N, column-major
    std::vector<T> output;
  };

  MaskDecoder() = default;
  MaskDecoder(ParamSet<T>& params, const ModelConfig& config);

  void init(ParamSet<T>& params, std::mt19937_64& rng) const;
  void forward(const ParamSet<T>& params, const std::vector<T>& points,
               const std::vector<T>& shape_code, std::vector<T>& out, Cache* cache) const;
  void backward(const ParamSet<T>& params, const Cache& cache, const std::vector<T>& dout,
                GradSet<T>& grads, std::vector<T>* dpoints, std::vector<T>* dshape) const;

 private:
  int width_ = 0;
  int depth_ = 0;
  int shape_dim_ = 0;
  int in_point_ = -1;
  int in_shape_ = -1;
  int in_bias_ = -1;
  std::vector<int> hidden_weight_;
  std::vector<int> hidden_bias_;
  int out_weight_ = -1;
  int out_bias_ = -1;
};

template <typename T>
struct MaskStack {
  int num_masks = 0;
  int height = 0;
  int width = 0;
  std::vector<T> raw;      // K x H x W
  std::vector<T> visible;  // K x H x W
};

// Canonical sample locations P^{-1} u for every grid point, interleaved.
template <typename T>
std::vector<T> canonical_points(const BasicPose<T>& pose, const CoordGrid& grid);

template <typename T>
std::vector<T> grid_points(const CoordGrid& grid);

// Per-pixel softmax of d_k * raw_k over k, or uniform weights when
// `occlusion` is false.
template <typename T>
std::vector<T> visibility(const std::vector<T>& raw, const std::vector<T>& depth_logits,
                          int pixels, bool occlusion = true);

template <typename T>
void visibility_backward(const std::vector<T>& raw, const std::vector<T>& depth_logits,
                         const std::vector<T>& visible, const std::vector<T>& dvisible,
                         int pixels, bool occlusion, std::vector<T>& draw,
                         std::vector<T>& ddepth);

// Visibility-weighted mixture of per-part similarity flows, in pixels.
template <typename T>
std::vector<T> compose_flow(const CapsuleSet<T>& caps_a, const CapsuleSet<T>& caps_b,
                            const std::vector<T>& visible_a, const CoordGrid& grid);

template <typename T>
void compose_flow_backward(const CapsuleSet<T>& caps_a, const CapsuleSet<T>& caps_b,
                           const std::vector<T>& visible_a, const CoordGrid& grid,
                           const std::vector<T>& dflow, std::vector<CapsuleGrad<T>>& dcaps_a,
                           std::vector<CapsuleGrad<T>>& dcaps_b, std::vector<T>& dvisible);

// Backward bilinear sampling out(u) = image(u + flow(u)), border clamped.
template <typename T>
std::vector<T> warp(const std::vector<T>& image, int height, int width, int channels,
                    const std::vector<T>& flow);

template <typename T>
void warp_backward(const std::vector<T>& image, int height, int width, int channels,
                   const std::vector<T>& flow, const std::vector<T>& dout,
                   std::vector<T>& dflow);

// Forward intermediates of masks -> visibility -> flow for one frame pair.
template <typename T>
struct FlowTrace {
  std::vector<typename MaskDecoder<T>::Cache> decoder;  // per capsule of frame a
  std::vector<T> masks;    // K x N raw masks, frame a
  std::vector<T> depths;   // K
  std::vector<T> visible;  // K x N
  std::vector<T> flow;     // N x 2, pixels
};

template <typename T>
class FlowCapsuleModel {
 public:
  FlowCapsuleModel() = default;
  FlowCapsuleModel(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ParamSet<T>& params() const { return params_; }
  ParamSet<T>& params() { return params_; }
  const CapsuleEncoder<T>& encoder() const { return encoder_; }
  const MaskDecoder<T>& decoder() const { return decoder_; }
  const CoordGrid& grid() const { return grid_; }

  CapsuleSet<T> encode(const Image& image) const;
  std::vector<T> decode_canonical(const std::vector<T>& shape_code,
                                  const std::vector<T>& points) const;
  std::vector<T> mask_in_image(const Capsule<T>& capsule, const CoordGrid& grid) const;
  MaskStack<T> masks(const CapsuleSet<T>& capsules) const;
  // Flow between two frames, pixels, interleaved (u, v).
  std::vector<T> flow(const CapsuleSet<T>& caps_a, const CapsuleSet<T>& caps_b,
                      const MaskStack<T>& masks_a) const;

  // Same flow as masks() + flow(), keeping what flow_backward needs.
  void flow_forward(const CapsuleSet<T>& caps_a, const CapsuleSet<T>& caps_b,
                    FlowTrace<T>& trace) const;
  // Pulls d(loss)/d(flow) back to both capsule sets; decoder parameter
  // gradients are accumulated into `grads`.
  void flow_backward(const CapsuleSet<T>& caps_a, const CapsuleSet<T>& caps_b,
                     const FlowTrace<T>& trace, const std::vector<T>& dflow, GradSet<T>& grads,
                     std::vector<CapsuleGrad<T>>& dcaps_a,
                     std::vector<CapsuleGrad<T>>& dcaps_b) const;

  void check_image(const Image& image) const;

 private:
  ModelConfig config_;
  ParamSet<T> params_;
  CapsuleEncoder<T> encoder_;
  MaskDecoder<T> decoder_;
  CoordGrid grid_;
};

FlowField to_flow_field(const std::vector<float>& flow, int height, int width);

}  // namespace flowparts
