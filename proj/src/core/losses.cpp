#include "losses.hpp"

#include <cmath>

#include "error.hpp"

namespace flowparts {

using nlohmann::json;

LossOptions loss_options_from_json(const json& j, LossOptions o) {
  try {
    o.weights.center = j.value("w_center", o.weights.center);
    o.weights.smooth = j.value("w_smooth", o.weights.smooth);
    o.center_grid = j.value("center_grid", o.center_grid);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad loss options: ") + e.what());
  }
  if (o.weights.center < 0.0 || o.weights.smooth < 0.0) {
    fail(ErrorCode::kConfig, "loss weights must be non-negative");
  }
  if (o.center_grid < 1) fail(ErrorCode::kConfig, "center_grid must be >= 1");
  return o;
}

json loss_options_to_json(const LossOptions& o) {
  return {{"w_center", o.weights.center},
          {"w_smooth", o.weights.smooth},
          {"center_grid", o.center_grid}};
}

template <typename T>
T render_loss(const std::vector<T>& image_a, const std::vector<T>& image_b, int height,
              int width, int channels, const std::vector<T>& flow, std::vector<T>* dflow) {
  const size_t n = static_cast<size_t>(height) * width * channels;
  if (image_a.size() != n || image_b.size() != n ||
      flow.size() != static_cast<size_t>(height) * width * 2) {
    fail(ErrorCode::kShape, "render_loss: image/flow sizes disagree");
  }
  const auto predicted = warp(image_b, height, width, channels, flow);
  T loss = T(0);
  std::vector<T> dpred(n);
  const T inv_n = T(1) / static_cast<T>(n);
  for (size_t i = 0; i < n; ++i) {
    const T diff = predicted[i] - image_a[i];
    loss += diff * diff;
    dpred[i] = T(2) * diff * inv_n;
  }
  if (dflow) warp_backward(image_b, height, width, channels, flow, dpred, *dflow);
  return loss * inv_n;
}

template <typename T>
T center_loss(const std::vector<T>& canonical_masks, const CoordGrid& grid,
              std::vector<T>* dmasks) {
  const size_t n = static_cast<size_t>(grid.size());
  if (n == 0 || canonical_masks.size() % n != 0) {
    fail(ErrorCode::kShape, "center_loss: mask stack does not match grid");
  }
  const size_t k_count = canonical_masks.size() / n;
  if (dmasks) dmasks->assign(canonical_masks.size(), T(0));
  T loss = T(0);
  for (size_t k = 0; k < k_count; ++k) {
    const T* m = canonical_masks.data() + k * n;
    T mass = T(0);
    T sx = T(0);
    T sy = T(0);
    for (size_t p = 0; p < n; ++p) {
      mass += m[p];
      sx += static_cast<T>(grid.x(static_cast<int>(p))) * m[p];
      sy += static_cast<T>(grid.y(static_cast<int>(p))) * m[p];
    }
    const T denom = mass + static_cast<T>(kCenterEps);
    const T cx = sx / denom;
    const T cy = sy / denom;
    loss += cx * cx + cy * cy;
    if (dmasks) {
      // d|c|^2/dm_p = 2 c . (v_p - c) / denom
      for (size_t p = 0; p < n; ++p) {
        const T vx = static_cast<T>(grid.x(static_cast<int>(p)));
        const T vy = static_cast<T>(grid.y(static_cast<int>(p)));
        (*dmasks)[k * n + p] = T(2) * (cx * (vx - cx) + cy * (vy - cy)) / denom;
      }
    }
  }
  return loss;
}

template <typename T>
T smooth_loss(const std::vector<T>& flow, int height, int width, std::vector<T>* dflow) {
  if (flow.size() != static_cast<size_t>(height) * width * 2) {
    fail(ErrorCode::kShape, "smooth_loss: flow size mismatch");
  }
  if (dflow) dflow->assign(flow.size(), T(0));
  T loss = T(0);
  auto at = [&](int i, int j, int c) { return (static_cast<size_t>(i) * width + j) * 2 + c; };
  if (width > 1) {
    const T inv = T(1) / static_cast<T>(height * (width - 1));
    T sum = T(0);
    for (int i = 0; i < height; ++i) {
      for (int j = 0; j + 1 < width; ++j) {
        for (int c = 0; c < 2; ++c) {
          const T d = flow[at(i, j + 1, c)] - flow[at(i, j, c)];
          sum += d * d;
          if (dflow) {
            (*dflow)[at(i, j + 1, c)] += T(2) * d * inv;
            (*dflow)[at(i, j, c)] -= T(2) * d * inv;
          }
        }
      }
    }
    loss += sum * inv;
  }
  if (height > 1) {
    const T inv = T(1) / static_cast<T>((height - 1) * width);
    T sum = T(0);
    for (int i = 0; i + 1 < height; ++i) {
      for (int j = 0; j < width; ++j) {
        for (int c = 0; c < 2; ++c) {
          const T d = flow[at(i + 1, j, c)] - flow[at(i, j, c)];
          sum += d * d;
          if (dflow) {
            (*dflow)[at(i + 1, j, c)] += T(2) * d * inv;
            (*dflow)[at(i, j, c)] -= T(2) * d * inv;
          }
        }
      }
    }
    loss += sum * inv;
  }
  return loss;
}

namespace {

template <typename T>
std::vector<T> image_values(const Image& image) {
  return std::vector<T>(image.data.begin(), image.data.end());
}

template <typename T>
LossBreakdown pair_loss(const FlowCapsuleModel<T>& model, const FramePair& pair,
                        const LossOptions& options, const CoordGrid& canonical_grid,
                        T grad_scale, GradSet<T>* grads) {
  const auto& cfg = model.config();
  const auto& params = model.params();
  const auto& encoder = model.encoder();
  const auto& decoder = model.decoder();
  model.check_image(*pair.image_a);
  model.check_image(*pair.image_b);
  const int k_count = cfg.num_capsules;
  const int h = cfg.height;
  const int w = cfg.width;

  typename CapsuleEncoder<T>::Cache enc_a, enc_b;
  std::vector<T> raw_a, raw_b;
  encoder.forward(params, image_to_chw<T>(*pair.image_a), raw_a, enc_a);
  encoder.forward(params, image_to_chw<T>(*pair.image_b), raw_b, enc_b);
  const auto caps_a = capsules_from_raw(raw_a, k_count, cfg.capsule_dim);
  const auto caps_b = capsules_from_raw(raw_b, k_count, cfg.capsule_dim);

  FlowTrace<T> trace;
  model.flow_forward(caps_a, caps_b, trace);
  const auto& flow = trace.flow;
  std::vector<T> m;

  const auto img_a = image_values<T>(*pair.image_a);
  const auto img_b = image_values<T>(*pair.image_b);
  std::vector<T> drender, dsmooth, dcenter;
  const T render = render_loss(img_a, img_b, h, w, 3, flow, grads ? &drender : nullptr);
  const T smooth = smooth_loss(flow, h, w, grads ? &dsmooth : nullptr);

  const auto canon_pts = grid_points<T>(canonical_grid);
  const int nc = canonical_grid.size();
  std::vector<typename MaskDecoder<T>::Cache> center_cache(static_cast<size_t>(k_count));
  std::vector<T> canon_masks(static_cast<size_t>(k_count) * nc);
  for (int k = 0; k < k_count; ++k) {
    decoder.forward(params, canon_pts, caps_a[static_cast<size_t>(k)].shape_code, m,
                    grads ? &center_cache[static_cast<size_t>(k)] : nullptr);
    std::copy(m.begin(), m.end(), canon_masks.begin() + static_cast<std::ptrdiff_t>(k) * nc);
  }
  const T center = center_loss(canon_masks, canonical_grid, grads ? &dcenter : nullptr);

  const auto wc = static_cast<T>(options.weights.center);
  const auto ws = static_cast<T>(options.weights.smooth);
  LossBreakdown out;
  out.render = static_cast<double>(render);
  out.center = static_cast<double>(center);
  out.smooth = static_cast<double>(smooth);
  out.total = static_cast<double>(render + wc * center + ws * smooth);
  if (!grads) return out;

  std::vector<T> dflow(flow.size());
  for (size_t i = 0; i < flow.size(); ++i) dflow[i] = grad_scale * (drender[i] + ws * dsmooth[i]);
  auto dcaps_a = zero_capsule_grads<T>(k_count, cfg.shape_dim());
  auto dcaps_b = zero_capsule_grads<T>(k_count, cfg.shape_dim());
  model.flow_backward(caps_a, caps_b, trace, dflow, *grads, dcaps_a, dcaps_b);

  std::vector<T> dshape;
  std::vector<T> dcm(static_cast<size_t>(nc));
  for (int k = 0; k < k_count; ++k) {
    for (int p = 0; p < nc; ++p) {
      dcm[static_cast<size_t>(p)] = grad_scale * wc * dcenter[static_cast<size_t>(k) * nc + p];
    }
    decoder.backward(params, center_cache[static_cast<size_t>(k)], dcm, *grads, nullptr, &dshape);
    auto& g = dcaps_a[static_cast<size_t>(k)];
    for (size_t s = 0; s < dshape.size(); ++s) g.shape_code[s] += dshape[s];
  }

  std::vector<T> draw;
  capsules_backward(raw_a, dcaps_a, cfg.capsule_dim, draw);
  encoder.backward(params, enc_a, draw, *grads);
  capsules_backward(raw_b, dcaps_b, cfg.capsule_dim, draw);
  encoder.backward(params, enc_b, draw, *grads);
  return out;
}

}  // namespace

template <typename T>
LossBreakdown total_loss(const FlowCapsuleModel<T>& model, std::span<const FramePair> batch,
                         const LossOptions& options, GradSet<T>* grads) {
  if (batch.empty()) fail(ErrorCode::kInvalidArgument, "total_loss needs a non-empty batch");
  if (grads && grads->size() != model.params().size()) {
    fail(ErrorCode::kShape, "gradient set does not match model parameters");
  }
  const auto canonical_grid = make_grid(options.center_grid, options.center_grid);
  const T grad_scale = T(1) / static_cast<T>(batch.size());
  LossBreakdown sum;
  for (const auto& pair : batch) {
    const auto b = pair_loss(model, pair, options, canonical_grid, grad_scale, grads);
    sum.render += b.render;
    sum.center += b.center;
    sum.smooth += b.smooth;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  sum.render *= inv;
  sum.center *= inv;
  sum.smooth *= inv;
  sum.total = sum.render + options.weights.center * sum.center +
              options.weights.smooth * sum.smooth;
  return sum;
}

#define FLOWPARTS_INSTANTIATE_LOSSES(T)                                                        \
  template T render_loss<T>(const std::vector<T>&, const std::vector<T>&, int, int, int,       \
                            const std::vector<T>&, std::vector<T>*);                           \
  template T center_loss<T>(const std::vector<T>&, const CoordGrid&, std::vector<T>*);         \
  template T smooth_loss<T>(const std::vector<T>&, int, int, std::vector<T>*);                 \
  template LossBreakdown total_loss<T>(const FlowCapsuleModel<T>&, std::span<const FramePair>, \
                                       const LossOptions&, GradSet<T>*);

FLOWPARTS_INSTANTIATE_LOSSES(float)
FLOWPARTS_INSTANTIATE_LOSSES(double)

}  // namespace flowparts
