#include "model.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "error.hpp"

namespace flowparts {

using nlohmann::json;

template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using ConstRowMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using RowMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ColMap = Eigen::Map<ColMat<T>>;
template <typename T>
using ConstColMap = Eigen::Map<const ColMat<T>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// Fixed-order row sums; Eigen's reductions peel by pointer alignment, which
// makes results depend on where the heap put the buffer.
template <typename T>
void add_row_sums(const ColMat<T>& m, T* out) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const T* col = m.data() + j * m.rows();
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[i] += col[i];
  }
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfig, what); };
  if (num_capsules < 1) bad("K must be >= 1");
  if (capsule_dim < 6) bad("C must be >= 6 so the shape code has at least one entry");
  if (height < 1 || width < 1) bad("model resolution must be positive");
  if (encoder_channels.empty()) bad("encoder needs at least one block");
  for (int c : encoder_channels) {
    if (c < 1) bad("encoder channel counts must be positive");
  }
  if (encoder_groups < 1) bad("encoder_groups must be >= 1");
  if (encoder_hidden < 1) bad("encoder_hidden must be >= 1");
  if (decoder_width < 1) bad("decoder_width must be >= 1");
  if (decoder_depth < 1) bad("decoder_depth must be >= 1");
}

json model_config_to_json(const ModelConfig& c) {
  return {{"K", c.num_capsules},
          {"C", c.capsule_dim},
          {"height", c.height},
          {"width", c.width},
          {"encoder_channels", c.encoder_channels},
          {"encoder_groups", c.encoder_groups},
          {"encoder_hidden", c.encoder_hidden},
          {"decoder_width", c.decoder_width},
          {"decoder_depth", c.decoder_depth},
          {"occlusion", c.occlusion}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  try {
    c.num_capsules = j.value("K", c.num_capsules);
    c.capsule_dim = j.value("C", c.capsule_dim);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    if (j.contains("encoder_channels")) {
      c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
    }
    c.encoder_groups = j.value("encoder_groups", c.encoder_groups);
    c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
    c.decoder_width = j.value("decoder_width", c.decoder_width);
    c.decoder_depth = j.value("decoder_depth", c.decoder_depth);
    c.occlusion = j.value("occlusion", c.occlusion);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Capsule head

template <typename T>
std::vector<CapsuleGrad<T>> zero_capsule_grads(int num_capsules, int shape_dim) {
  std::vector<CapsuleGrad<T>> g(static_cast<size_t>(num_capsules));
  for (auto& c : g) c.shape_code.assign(static_cast<size_t>(shape_dim), T(0));
  return g;
}

template <typename T>
CapsuleSet<T> capsules_from_raw(const std::vector<T>& raw, int num_capsules, int capsule_dim) {
  if (raw.size() != static_cast<size_t>(num_capsules) * capsule_dim) {
    fail(ErrorCode::kShape, "capsule head output has wrong size");
  }
  const int shape_dim = capsule_dim - 5;
  CapsuleSet<T> caps(static_cast<size_t>(num_capsules));
  for (int k = 0; k < num_capsules; ++k) {
    const T* r = raw.data() + static_cast<size_t>(k) * capsule_dim;
    auto& c = caps[static_cast<size_t>(k)];
    c.shape_code.assign(r, r + shape_dim);
    c.pose.tx = std::tanh(r[shape_dim]);
    c.pose.ty = std::tanh(r[shape_dim + 1]);
    c.pose.rot = r[shape_dim + 2];
    c.pose.scale = std::exp(r[shape_dim + 3]);
    c.depth_logit = r[shape_dim + 4];
  }
  return caps;
}

template <typename T>
void capsules_backward(const std::vector<T>& raw, const std::vector<CapsuleGrad<T>>& dcaps,
                       int capsule_dim, std::vector<T>& draw) {
  const int shape_dim = capsule_dim - 5;
  draw.assign(raw.size(), T(0));
  for (size_t k = 0; k < dcaps.size(); ++k) {
    const T* r = raw.data() + k * capsule_dim;
    T* d = draw.data() + k * capsule_dim;
    const auto& g = dcaps[k];
    std::copy(g.shape_code.begin(), g.shape_code.end(), d);
    const T tx = std::tanh(r[shape_dim]);
    const T ty = std::tanh(r[shape_dim + 1]);
    d[shape_dim] = g.tx * (T(1) - tx * tx);
    d[shape_dim + 1] = g.ty * (T(1) - ty * ty);
    d[shape_dim + 2] = g.rot;
    d[shape_dim + 3] = g.scale * std::exp(r[shape_dim + 3]);
    d[shape_dim + 4] = g.depth_logit;
  }
}

template <typename T>
std::vector<T> image_to_chw(const Image& image) {
  std::vector<T> out(image.data.size());
  const size_t plane = static_cast<size_t>(image.height) * image.width;
  for (size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < image.channels; ++c) {
      out[c * plane + p] = static_cast<T>(image.data[p * image.channels + c]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoder

template <typename T>
CapsuleEncoder<T>::CapsuleEncoder(ParamSet<T>& params, const ModelConfig& config)
    : config_(config) {
  int cin = 3;
  int h = config.height;
  int w = config.width;
  for (size_t b = 0; b < config.encoder_channels.size(); ++b) {
    const int cout = config.encoder_channels[b];
    const std::string name = "encoder.block" + std::to_string(b);
    convs_.emplace_back(params, name + ".conv", cin, cout);
    norms_.emplace_back(params, name + ".norm", cout, std::gcd(cout, config.encoder_groups));
    cin = cout;
    h = Conv2d<T>::out_size(h);
    w = Conv2d<T>::out_size(w);
  }
  fc_hidden_ = Linear<T>(params, "encoder.fc_hidden", cin * h * w, config.encoder_hidden);
  fc_out_ = Linear<T>(params, "encoder.fc_out", config.encoder_hidden,
                      config.num_capsules * config.capsule_dim);
}

template <typename T>
void CapsuleEncoder<T>::init(ParamSet<T>& params, std::mt19937_64& rng) const {
  for (const auto& c : convs_) c.init(params, rng);
  for (const auto& n : norms_) n.init(params);
  fc_hidden_.init(params, rng);
  // Small head so every capsule starts near the identity pose.
  fc_out_.init(params, rng, 0.1);
}

template <typename T>
void CapsuleEncoder<T>::forward(const ParamSet<T>& params, const std::vector<T>& image_chw,
                                std::vector<T>& raw, Cache& cache) const {
  const size_t blocks = convs_.size();
  cache.conv.resize(blocks);
  cache.norm.resize(blocks);
  cache.activations.resize(blocks);
  cache.spatial.resize(blocks);
  int h = config_.height;
  int w = config_.width;
  std::vector<T> conv_out;
  const std::vector<T>* in = &image_chw;
  for (size_t b = 0; b < blocks; ++b) {
    convs_[b].forward(params, *in, h, w, conv_out, cache.conv[b]);
    h = Conv2d<T>::out_size(h);
    w = Conv2d<T>::out_size(w);
    cache.spatial[b] = h * w;
    norms_[b].forward(params, conv_out, h * w, cache.activations[b], cache.norm[b]);
    relu_inplace(cache.activations[b]);
    in = &cache.activations[b];
  }
  fc_hidden_.forward(params, *in, cache.hidden);
  relu_inplace(cache.hidden);
  fc_out_.forward(params, cache.hidden, raw);
}

template <typename T>
void CapsuleEncoder<T>::backward(const ParamSet<T>& params, const Cache& cache,
                                 const std::vector<T>& draw, GradSet<T>& grads) const {
  std::vector<T> dhidden;
  fc_out_.backward(params, cache.hidden, draw, grads, &dhidden);
  relu_backward_inplace(cache.hidden, dhidden);
  std::vector<T> dact;
  fc_hidden_.backward(params, cache.activations.back(), dhidden, grads, &dact);
  std::vector<T> dnorm;
  for (size_t b = convs_.size(); b-- > 0;) {
    relu_backward_inplace(cache.activations[b], dact);
    norms_[b].backward(params, cache.norm[b], dact, cache.spatial[b], grads, dnorm);
    convs_[b].backward(params, cache.conv[b], dnorm, grads, b > 0 ? &dact : nullptr);
  }
}

// ---------------------------------------------------------------------------
// Decoder

template <typename T>
MaskDecoder<T>::MaskDecoder(ParamSet<T>& params, const ModelConfig& config)
    : width_(config.decoder_width), depth_(config.decoder_depth),
      shape_dim_(config.shape_dim()) {
  in_point_ = params.add("decoder.in_point.weight", {width_, 2});
  in_shape_ = params.add("decoder.in_shape.weight", {width_, shape_dim_});
  in_bias_ = params.add("decoder.in.bias", {width_});
  for (int l = 1; l < depth_; ++l) {
    hidden_weight_.push_back(
        params.add("decoder.hidden" + std::to_string(l) + ".weight", {width_, width_}));
    hidden_bias_.push_back(params.add("decoder.hidden" + std::to_string(l) + ".bias", {width_}));
  }
  out_weight_ = params.add("decoder.out.weight", {1, width_});
  out_bias_ = params.add("decoder.out.bias", {1});
}

template <typename T>
void MaskDecoder<T>::init(ParamSet<T>& params, std::mt19937_64& rng) const {
  he_normal(params.values[in_point_], 2 + shape_dim_, rng);
  he_normal(params.values[in_shape_], 2 + shape_dim_, rng);
  std::fill(params.values[in_bias_].begin(), params.values[in_bias_].end(), T(0));
  for (size_t l = 0; l < hidden_weight_.size(); ++l) {
    he_normal(params.values[hidden_weight_[l]], width_, rng);
    std::fill(params.values[hidden_bias_[l]].begin(), params.values[hidden_bias_[l]].end(), T(0));
  }
  he_normal(params.values[out_weight_], width_, rng, 0.5);
  params.values[out_bias_][0] = T(0);
}

template <typename T>
void MaskDecoder<T>::forward(const ParamSet<T>& params, const std::vector<T>& points,
                             const std::vector<T>& shape_code, std::vector<T>& out,
                             Cache* cache) const {
  if (shape_code.size() != static_cast<size_t>(shape_dim_)) {
    fail(ErrorCode::kShape, "shape code has length " + std::to_string(shape_code.size()) +
                                ", decoder expects " + std::to_string(shape_dim_));
  }
  const auto n = static_cast<Eigen::Index>(points.size() / 2);
  ConstColMap<T> pts(points.data(), 2, n);
  ConstRowMap<T> w_point(params.values[in_point_].data(), width_, 2);
  ConstRowMap<T> w_shape(params.values[in_shape_].data(), width_, shape_dim_);
  const Eigen::Matrix<T, Eigen::Dynamic, 1> shape_bias =
      w_shape * ConstVecMap<T>(shape_code.data(), shape_dim_) +
      ConstVecMap<T>(params.values[in_bias_].data(), width_);

  std::vector<std::vector<T>> local;
  auto& acts = cache ? cache->activations : local;
  acts.resize(static_cast<size_t>(depth_));
  acts[0].resize(static_cast<size_t>(width_) * n);
  ColMap<T> a0(acts[0].data(), width_, n);
  a0.noalias() = w_point * pts;
  a0.colwise() += shape_bias;
  a0 = a0.cwiseMax(T(0));
  for (int l = 1; l < depth_; ++l) {
    acts[l].resize(static_cast<size_t>(width_) * n);
    ColMap<T> al(acts[l].data(), width_, n);
    ConstColMap<T> prev(acts[l - 1].data(), width_, n);
    ConstRowMap<T> wl(params.values[hidden_weight_[l - 1]].data(), width_, width_);
    al.noalias() = wl * prev;
    al.colwise() += ConstVecMap<T>(params.values[hidden_bias_[l - 1]].data(), width_);
    al = al.cwiseMax(T(0));
  }
  out.resize(static_cast<size_t>(n));
  ConstRowMap<T> w_out(params.values[out_weight_].data(), 1, width_);
  ColMap<T> o(out.data(), 1, n);
  o.noalias() = w_out * ConstColMap<T>(acts.back().data(), width_, n);
  const T b = params.values[out_bias_][0];
  for (auto& v : out) v = T(1) / (T(1) + std::exp(-(v + b)));
  if (cache) {
    cache->points = points;
    cache->shape_code = shape_code;
    cache->output = out;
  }
}

template <typename T>
void MaskDecoder<T>::backward(const ParamSet<T>& params, const Cache& cache,
                              const std::vector<T>& dout, GradSet<T>& grads,
                              std::vector<T>* dpoints, std::vector<T>* dshape) const {
  const auto n = static_cast<Eigen::Index>(cache.output.size());
  Eigen::Matrix<T, 1, Eigen::Dynamic> dz(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T y = cache.output[static_cast<size_t>(i)];
    dz(i) = dout[static_cast<size_t>(i)] * y * (T(1) - y);
  }
  ConstColMap<T> last(cache.activations.back().data(), width_, n);
  RowMap<T>(grads[out_weight_].data(), 1, width_).noalias() += dz * last.transpose();
  T dz_sum = T(0);
  for (Eigen::Index i = 0; i < n; ++i) dz_sum += dz(i);
  grads[out_bias_][0] += dz_sum;
  ConstRowMap<T> w_out(params.values[out_weight_].data(), 1, width_);
  ColMat<T> da = w_out.transpose() * dz;

  for (int l = depth_ - 1; l >= 1; --l) {
    ConstColMap<T> al(cache.activations[l].data(), width_, n);
    da = (al.array() > T(0)).select(da, T(0));
    ConstColMap<T> prev(cache.activations[l - 1].data(), width_, n);
    RowMap<T>(grads[hidden_weight_[l - 1]].data(), width_, width_).noalias() +=
        da * prev.transpose();
    add_row_sums(da, grads[hidden_bias_[l - 1]].data());
    ConstRowMap<T> wl(params.values[hidden_weight_[l - 1]].data(), width_, width_);
    da = (wl.transpose() * da).eval();
  }
  ConstColMap<T> a0(cache.activations[0].data(), width_, n);
  da = (a0.array() > T(0)).select(da, T(0));
  ConstColMap<T> pts(cache.points.data(), 2, n);
  RowMap<T>(grads[in_point_].data(), width_, 2).noalias() += da * pts.transpose();
  Eigen::Matrix<T, Eigen::Dynamic, 1> row_sum = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(width_);
  add_row_sums(da, row_sum.data());
  ConstVecMap<T> s(cache.shape_code.data(), shape_dim_);
  RowMap<T>(grads[in_shape_].data(), width_, shape_dim_).noalias() += row_sum * s.transpose();
  VecMap<T>(grads[in_bias_].data(), width_) += row_sum;
  if (dpoints) {
    dpoints->resize(static_cast<size_t>(2 * n));
    ConstRowMap<T> w_point(params.values[in_point_].data(), width_, 2);
    ColMap<T>(dpoints->data(), 2, n).noalias() = w_point.transpose() * da;
  }
  if (dshape) {
    dshape->resize(static_cast<size_t>(shape_dim_));
    ConstRowMap<T> w_shape(params.values[in_shape_].data(), width_, shape_dim_);
    VecMap<T>(dshape->data(), shape_dim_).noalias() = w_shape.transpose() * row_sum;
  }
}

// ---------------------------------------------------------------------------
// Image formation

namespace {

template <typename T>
void check_pose(const BasicPose<T>& pose) {
  if (!std::isfinite(static_cast<double>(pose.tx)) || !std::isfinite(static_cast<double>(pose.ty)) ||
      !std::isfinite(static_cast<double>(pose.rot)) ||
      !std::isfinite(static_cast<double>(pose.scale))) {
    fail(ErrorCode::kNonFinite, "capsule pose is not finite");
  }
  if (!(static_cast<double>(pose.scale) > kDegenerateScale)) {
    fail(ErrorCode::kDegeneratePose,
         "capsule pose scale " + std::to_string(static_cast<double>(pose.scale)) +
             " is degenerate");
  }
}

}  // namespace

template <typename T>
std::vector<T> grid_points(const CoordGrid& grid) {
  std::vector<T> out(grid.coords.size());
  std::transform(grid.coords.begin(), grid.coords.end(), out.begin(),
                 [](double v) { return static_cast<T>(v); });
  return out;
}

template <typename T>
std::vector<T> canonical_points(const BasicPose<T>& pose, const CoordGrid& grid) {
  check_pose(pose);
  std::vector<T> out(grid.coords.size());
  for (int p = 0; p < grid.size(); ++p) {
    const auto v = inverse_apply_point(pose, static_cast<T>(grid.x(p)), static_cast<T>(grid.y(p)));
    out[2 * static_cast<size_t>(p)] = v.x;
    out[2 * static_cast<size_t>(p) + 1] = v.y;
  }
  return out;
}

template <typename T>
std::vector<T> visibility(const std::vector<T>& raw, const std::vector<T>& depth_logits,
                          int pixels, bool occlusion) {
  const size_t k_count = depth_logits.size();
  if (raw.size() != k_count * static_cast<size_t>(pixels)) {
    fail(ErrorCode::kShape, "visibility: mask stack and depth count disagree");
  }
  std::vector<T> out(raw.size());
  if (!occlusion) {
    std::fill(out.begin(), out.end(), T(1) / static_cast<T>(k_count));
    return out;
  }
  for (int p = 0; p < pixels; ++p) {
    T max_logit = -std::numeric_limits<T>::infinity();
    for (size_t k = 0; k < k_count; ++k) {
      max_logit = std::max(max_logit, depth_logits[k] * raw[k * pixels + p]);
    }
    T denom = T(0);
    for (size_t k = 0; k < k_count; ++k) {
      const T e = std::exp(depth_logits[k] * raw[k * pixels + p] - max_logit);
      out[k * pixels + p] = e;
      denom += e;
    }
    for (size_t k = 0; k < k_count; ++k) out[k * pixels + p] /= denom;
  }
  return out;
}

template <typename T>
void visibility_backward(const std::vector<T>& raw, const std::vector<T>& depth_logits,
                         const std::vector<T>& visible, const std::vector<T>& dvisible,
                         int pixels, bool occlusion, std::vector<T>& draw,
                         std::vector<T>& ddepth) {
  const size_t k_count = depth_logits.size();
  draw.assign(raw.size(), T(0));
  ddepth.assign(k_count, T(0));
  if (!occlusion) return;
  for (int p = 0; p < pixels; ++p) {
    T dot = T(0);
    for (size_t k = 0; k < k_count; ++k) dot += visible[k * pixels + p] * dvisible[k * pixels + p];
    for (size_t k = 0; k < k_count; ++k) {
      const size_t i = k * pixels + p;
      const T dlogit = visible[i] * (dvisible[i] - dot);
      draw[i] = dlogit * depth_logits[k];
      ddepth[k] += dlogit * raw[i];
    }
  }
}

template <typename T>
std::vector<T> compose_flow(const CapsuleSet<T>& caps_a, const CapsuleSet<T>& caps_b,
                            const std::vector<T>& visible_a, const CoordGrid& grid) {
  if (caps_a.size() != caps_b.size()) {
    fail(ErrorCode::kShape, "compose_flow: capsule sets differ in size");
  }
  const int n = grid.size();
  if (visible_a.size() != caps_a.size() * static_cast<size_t>(n)) {
    fail(ErrorCode::kShape, "compose_flow: visibility stack does not match grid");
  }
  const T half_w = static_cast<T>(grid.width) / T(2);
  const T half_h = static_cast<T>(grid.height) / T(2);
  std::vector<T> flow(2 * static_cast<size_t>(n), T(0));
  for (size_t k = 0; k < caps_a.size(); ++k) {
    const auto& pa = caps_a[k].pose;
    const auto& pb = caps_b[k].pose;
    check_pose(pa);
    check_pose(pb);
    // Point motion in double: identical poses then give |flow| far below
    // float resolution.
    const SimilarityPose da = pose_cast<double>(pa);
    const SimilarityPose db = pose_cast<double>(pb);
    for (int p = 0; p < n; ++p) {
      const double ux = grid.x(p);
      const double uy = grid.y(p);
      const auto v = inverse_apply_point(da, ux, uy);
      const auto moved = apply_point(db, v.x, v.y);
      const T w = visible_a[k * n + p];
      flow[2 * static_cast<size_t>(p)] += w * static_cast<T>(moved.x - ux) * half_w;
      flow[2 * static_cast<size_t>(p) + 1] += w * static_cast<T>(moved.y - uy) * half_h;
    }
  }
  return flow;
}

template <typename T>
void compose_flow_backward(const CapsuleSet<T>& caps_a, const CapsuleSet<T>& caps_b,
                           const std::vector<T>& visible_a, const CoordGrid& grid,
                           const std::vector<T>& dflow, std::vector<CapsuleGrad<T>>& dcaps_a,
                           std::vector<CapsuleGrad<T>>& dcaps_b, std::vector<T>& dvisible) {
  const int n = grid.size();
  const T half_w = static_cast<T>(grid.width) / T(2);
  const T half_h = static_cast<T>(grid.height) / T(2);
  dvisible.assign(visible_a.size(), T(0));
  for (size_t k = 0; k < caps_a.size(); ++k) {
    const auto& pa = caps_a[k].pose;
    const auto& pb = caps_b[k].pose;
    const auto lin_b = pose_linear(pb);
    auto& ga = dcaps_a[k];
    auto& gb = dcaps_b[k];
    for (int p = 0; p < n; ++p) {
      const T ux = static_cast<T>(grid.x(p));
      const T uy = static_cast<T>(grid.y(p));
      const auto v = inverse_apply_point(pa, ux, uy);
      const auto moved = apply_point(pb, v.x, v.y);
      const T gx = dflow[2 * static_cast<size_t>(p)] * half_w;
      const T gy = dflow[2 * static_cast<size_t>(p) + 1] * half_h;
      const size_t i = k * n + p;
      dvisible[i] = gx * (moved.x - ux) + gy * (moved.y - uy);
      const T w = visible_a[i];
      const T wx = w * gx;
      const T wy = w * gy;
      const auto jb = apply_point_jacobian(pb, v.x, v.y);
      gb.tx += wx * jb[0] + wy * jb[4];
      gb.ty += wx * jb[1] + wy * jb[5];
      gb.rot += wx * jb[2] + wy * jb[6];
      gb.scale += wx * jb[3] + wy * jb[7];
      // Through v = P_a^{-1} u.
      const T dvx = wx * lin_b[0] + wy * lin_b[2];
      const T dvy = wx * lin_b[1] + wy * lin_b[3];
      const auto ja = inverse_apply_point_jacobian(pa, ux, uy);
      ga.tx += dvx * ja[0] + dvy * ja[4];
      ga.ty += dvx * ja[1] + dvy * ja[5];
      ga.rot += dvx * ja[2] + dvy * ja[6];
      ga.scale += dvx * ja[3] + dvy * ja[7];
    }
  }
}

namespace {

template <typename T>
struct BilinearTap {
  int x0, x1, y0, y1;
  T fx, fy;
  bool clamped_x, clamped_y;
};

template <typename T>
BilinearTap<T> bilinear_tap(T x, T y, int height, int width) {
  BilinearTap<T> t{};
  const T max_x = static_cast<T>(width - 1);
  const T max_y = static_cast<T>(height - 1);
  t.clamped_x = !(x >= T(0) && x <= max_x);
  t.clamped_y = !(y >= T(0) && y <= max_y);
  x = std::clamp(x, T(0), max_x);
  y = std::clamp(y, T(0), max_y);
  t.x0 = static_cast<int>(std::floor(x));
  t.y0 = static_cast<int>(std::floor(y));
  t.x1 = std::min(t.x0 + 1, width - 1);
  t.y1 = std::min(t.y0 + 1, height - 1);
  t.fx = x - static_cast<T>(t.x0);
  t.fy = y - static_cast<T>(t.y0);
  return t;
}

}  // namespace

template <typename T>
std::vector<T> warp(const std::vector<T>& image, int height, int width, int channels,
                    const std::vector<T>& flow) {
  if (image.size() != static_cast<size_t>(height) * width * channels ||
      flow.size() != static_cast<size_t>(height) * width * 2) {
    fail(ErrorCode::kShape, "warp: image and flow sizes disagree");
  }
  std::vector<T> out(image.size());
  auto px = [&](int i, int j, int c) { return image[(static_cast<size_t>(i) * width + j) * channels + c]; };
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const size_t p = static_cast<size_t>(i) * width + j;
      const auto t = bilinear_tap(static_cast<T>(j) + flow[2 * p], static_cast<T>(i) + flow[2 * p + 1],
                                  height, width);
      for (int c = 0; c < channels; ++c) {
        const T top = (T(1) - t.fx) * px(t.y0, t.x0, c) + t.fx * px(t.y0, t.x1, c);
        const T bottom = (T(1) - t.fx) * px(t.y1, t.x0, c) + t.fx * px(t.y1, t.x1, c);
        out[p * channels + c] = (T(1) - t.fy) * top + t.fy * bottom;
      }
    }
  }
  return out;
}

template <typename T>
void warp_backward(const std::vector<T>& image, int height, int width, int channels,
                   const std::vector<T>& flow, const std::vector<T>& dout,
                   std::vector<T>& dflow) {
  dflow.assign(flow.size(), T(0));
  auto px = [&](int i, int j, int c) { return image[(static_cast<size_t>(i) * width + j) * channels + c]; };
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const size_t p = static_cast<size_t>(i) * width + j;
      const auto t = bilinear_tap(static_cast<T>(j) + flow[2 * p], static_cast<T>(i) + flow[2 * p + 1],
                                  height, width);
      T gx = T(0);
      T gy = T(0);
      for (int c = 0; c < channels; ++c) {
        const T g = dout[p * channels + c];
        const T v00 = px(t.y0, t.x0, c);
        const T v01 = px(t.y0, t.x1, c);
        const T v10 = px(t.y1, t.x0, c);
        const T v11 = px(t.y1, t.x1, c);
        gx += g * ((T(1) - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
        gy += g * ((T(1) - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
      }
      dflow[2 * p] = t.clamped_x ? T(0) : gx;
      dflow[2 * p + 1] = t.clamped_y ? T(0) : gy;
    }
  }
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
FlowCapsuleModel<T>::FlowCapsuleModel(const ModelConfig& config, uint64_t seed)
    : config_(config) {
  config_.validate();
  encoder_ = CapsuleEncoder<T>(params_, config_);
  decoder_ = MaskDecoder<T>(params_, config_);
  grid_ = make_grid(config_.height, config_.width);
  std::mt19937_64 rng(seed);
  encoder_.init(params_, rng);
  decoder_.init(params_, rng);
}

template <typename T>
void FlowCapsuleModel<T>::check_image(const Image& image) const {
  if (image.height != config_.height || image.width != config_.width || image.channels != 3) {
    fail(ErrorCode::kShape, "model expects " + std::to_string(config_.height) + "x" +
                                std::to_string(config_.width) + "x3 images, got " +
                                std::to_string(image.height) + "x" + std::to_string(image.width) +
                                "x" + std::to_string(image.channels));
  }
}

template <typename T>
CapsuleSet<T> FlowCapsuleModel<T>::encode(const Image& image) const {
  check_image(image);
  typename CapsuleEncoder<T>::Cache cache;
  std::vector<T> raw;
  encoder_.forward(params_, image_to_chw<T>(image), raw, cache);
  return capsules_from_raw(raw, config_.num_capsules, config_.capsule_dim);
}

template <typename T>
std::vector<T> FlowCapsuleModel<T>::decode_canonical(const std::vector<T>& shape_code,
                                                     const std::vector<T>& points) const {
  std::vector<T> out;
  decoder_.forward(params_, points, shape_code, out, nullptr);
  return out;
}

template <typename T>
std::vector<T> FlowCapsuleModel<T>::mask_in_image(const Capsule<T>& capsule,
                                                  const CoordGrid& grid) const {
  return decode_canonical(capsule.shape_code, canonical_points(capsule.pose, grid));
}

template <typename T>
MaskStack<T> FlowCapsuleModel<T>::masks(const CapsuleSet<T>& capsules) const {
  MaskStack<T> stack;
  stack.num_masks = static_cast<int>(capsules.size());
  stack.height = config_.height;
  stack.width = config_.width;
  const size_t n = static_cast<size_t>(grid_.size());
  stack.raw.resize(capsules.size() * n);
  std::vector<T> depths;
  for (size_t k = 0; k < capsules.size(); ++k) {
    const auto m = mask_in_image(capsules[k], grid_);
    std::copy(m.begin(), m.end(), stack.raw.begin() + static_cast<std::ptrdiff_t>(k * n));
    depths.push_back(capsules[k].depth_logit);
  }
  stack.visible = visibility(stack.raw, depths, grid_.size(), config_.occlusion);
  return stack;
}

template <typename T>
std::vector<T> FlowCapsuleModel<T>::flow(const CapsuleSet<T>& caps_a, const CapsuleSet<T>& caps_b,
                                         const MaskStack<T>& masks_a) const {
  return compose_flow(caps_a, caps_b, masks_a.visible, grid_);
}

template <typename T>
void FlowCapsuleModel<T>::flow_forward(const CapsuleSet<T>& caps_a, const CapsuleSet<T>& caps_b,
                                       FlowTrace<T>& trace) const {
  const size_t k_count = caps_a.size();
  const size_t n = static_cast<size_t>(grid_.size());
  trace.decoder.assign(k_count, {});
  trace.masks.resize(k_count * n);
  trace.depths.resize(k_count);
  std::vector<T> m;
  for (size_t k = 0; k < k_count; ++k) {
    const auto& c = caps_a[k];
    decoder_.forward(params_, canonical_points(c.pose, grid_), c.shape_code, m, &trace.decoder[k]);
    std::copy(m.begin(), m.end(), trace.masks.begin() + static_cast<std::ptrdiff_t>(k * n));
    trace.depths[k] = c.depth_logit;
  }
  trace.visible = visibility(trace.masks, trace.depths, grid_.size(), config_.occlusion);
  trace.flow = compose_flow(caps_a, caps_b, trace.visible, grid_);
}

template <typename T>
void FlowCapsuleModel<T>::flow_backward(const CapsuleSet<T>& caps_a, const CapsuleSet<T>& caps_b,
                                        const FlowTrace<T>& trace, const std::vector<T>& dflow,
                                        GradSet<T>& grads, std::vector<CapsuleGrad<T>>& dcaps_a,
                                        std::vector<CapsuleGrad<T>>& dcaps_b) const {
  const int n = grid_.size();
  std::vector<T> dvisible;
  compose_flow_backward(caps_a, caps_b, trace.visible, grid_, dflow, dcaps_a, dcaps_b, dvisible);
  std::vector<T> dmasks, ddepth;
  visibility_backward(trace.masks, trace.depths, trace.visible, dvisible, n, config_.occlusion,
                      dmasks, ddepth);
  std::vector<T> dm(static_cast<size_t>(n));
  std::vector<T> dpoints, dshape;
  for (size_t k = 0; k < caps_a.size(); ++k) {
    auto& g = dcaps_a[k];
    const auto& pose = caps_a[k].pose;
    g.depth_logit += ddepth[k];
    std::copy(dmasks.begin() + static_cast<std::ptrdiff_t>(k) * n,
              dmasks.begin() + static_cast<std::ptrdiff_t>(k + 1) * n, dm.begin());
    decoder_.backward(params_, trace.decoder[k], dm, grads, &dpoints, &dshape);
    for (size_t s = 0; s < dshape.size(); ++s) g.shape_code[s] += dshape[s];
    for (int p = 0; p < n; ++p) {
      const auto j = inverse_apply_point_jacobian(pose, static_cast<T>(grid_.x(p)),
                                                  static_cast<T>(grid_.y(p)));
      const T dx = dpoints[2 * static_cast<size_t>(p)];
      const T dy = dpoints[2 * static_cast<size_t>(p) + 1];
      g.tx += dx * j[0] + dy * j[4];
      g.ty += dx * j[1] + dy * j[5];
      g.rot += dx * j[2] + dy * j[6];
      g.scale += dx * j[3] + dy * j[7];
    }
  }
}

FlowField to_flow_field(const std::vector<float>& flow, int height, int width) {
  FlowField f(height, width);
  if (flow.size() != f.data.size()) fail(ErrorCode::kShape, "flow buffer size mismatch");
  f.data = flow;
  return f;
}

#define FLOWPARTS_INSTANTIATE_MODEL(T)                                                          \
  template std::vector<CapsuleGrad<T>> zero_capsule_grads<T>(int, int);                         \
  template CapsuleSet<T> capsules_from_raw<T>(const std::vector<T>&, int, int);                 \
  template void capsules_backward<T>(const std::vector<T>&, const std::vector<CapsuleGrad<T>>&, \
                                     int, std::vector<T>&);                                     \
  template std::vector<T> image_to_chw<T>(const Image&);                                        \
  template class CapsuleEncoder<T>;                                                             \
  template class MaskDecoder<T>;                                                                \
  template std::vector<T> grid_points<T>(const CoordGrid&);                                     \
  template std::vector<T> canonical_points<T>(const BasicPose<T>&, const CoordGrid&);           \
  template std::vector<T> visibility<T>(const std::vector<T>&, const std::vector<T>&, int, bool); \
  template void visibility_backward<T>(const std::vector<T>&, const std::vector<T>&,            \
                                       const std::vector<T>&, const std::vector<T>&, int, bool, \
                                       std::vector<T>&, std::vector<T>&);                       \
  template std::vector<T> compose_flow<T>(const CapsuleSet<T>&, const CapsuleSet<T>&,           \
                                          const std::vector<T>&, const CoordGrid&);             \
  template void compose_flow_backward<T>(const CapsuleSet<T>&, const CapsuleSet<T>&,            \
                                         const std::vector<T>&, const CoordGrid&,               \
                                         const std::vector<T>&, std::vector<CapsuleGrad<T>>&,   \
                                         std::vector<CapsuleGrad<T>>&, std::vector<T>&);        \
  template std::vector<T> warp<T>(const std::vector<T>&, int, int, int, const std::vector<T>&); \
  template void warp_backward<T>(const std::vector<T>&, int, int, int, const std::vector<T>&,   \
                                 const std::vector<T>&, std::vector<T>&);                       \
  template class FlowCapsuleModel<T>;

FLOWPARTS_INSTANTIATE_MODEL(float)
FLOWPARTS_INSTANTIATE_MODEL(double)

}  // namespace flowparts
