#include "nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace flowparts {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
int ParamSet<T>::add(std::string name, std::vector<int> shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  names.push_back(std::move(name));
  shapes.push_back(std::move(shape));
  values.emplace_back(n, T(0));
  return static_cast<int>(values.size()) - 1;
}

template <typename T>
int ParamSet<T>::find(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

template <typename T>
size_t ParamSet<T>::total_count() const {
  size_t n = 0;
  for (const auto& v : values) n += v.size();
  return n;
}

template <typename T>
std::vector<std::vector<T>> ParamSet<T>::zeros_like() const {
  std::vector<std::vector<T>> out;
  out.reserve(values.size());
  for (const auto& v : values) out.emplace_back(v.size(), T(0));
  return out;
}

template <typename T>
void zero_grads(GradSet<T>& grads) {
  for (auto& g : grads) std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
void he_normal(std::vector<T>& w, int fan_in, std::mt19937_64& rng, double gain) {
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / std::max(1, fan_in)));
  for (auto& x : w) x = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(ParamSet<T>& params, const std::string& name, int in_channels,
                  int out_channels)
    : cin_(in_channels), cout_(out_channels) {
  weight_ = params.add(name + ".weight", {out_channels, in_channels, 3, 3});
  bias_ = params.add(name + ".bias", {out_channels});
}

template <typename T>
void Conv2d<T>::init(ParamSet<T>& params, std::mt19937_64& rng) const {
  he_normal(params.values[weight_], cin_ * 9, rng);
  std::fill(params.values[bias_].begin(), params.values[bias_].end(), T(0));
}

template <typename T>
void Conv2d<T>::forward(const ParamSet<T>& params, const std::vector<T>& in, int h, int w,
                        std::vector<T>& out, Cache& cache) const {
  const int oh = out_size(h);
  const int ow = out_size(w);
  const int rows = cin_ * 9;
  const int cols = oh * ow;
  cache.in_h = h;
  cache.in_w = w;
  cache.cols.assign(static_cast<size_t>(rows) * cols, T(0));
  for (int c = 0; c < cin_; ++c) {
    for (int ki = 0; ki < 3; ++ki) {
      for (int kj = 0; kj < 3; ++kj) {
        T* row = cache.cols.data() + static_cast<size_t>(c * 9 + ki * 3 + kj) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = 2 * oy + ki - 1;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = 2 * ox + kj - 1;
            if (ix < 0 || ix >= w) continue;
            row[oy * ow + ox] = in[(static_cast<size_t>(c) * h + iy) * w + ix];
          }
        }
      }
    }
  }
  out.resize(static_cast<size_t>(cout_) * cols);
  ConstRowMap<T> weight(params.values[weight_].data(), cout_, rows);
  ConstRowMap<T> col(cache.cols.data(), rows, cols);
  RowMap<T> result(out.data(), cout_, cols);
  result.noalias() = weight * col;
  ConstVecMap<T> bias(params.values[bias_].data(), cout_);
  result.colwise() += bias;
}

template <typename T>
void Conv2d<T>::backward(const ParamSet<T>& params, const Cache& cache,
                         const std::vector<T>& dout, GradSet<T>& grads,
                         std::vector<T>* din) const {
  const int h = cache.in_h;
  const int w = cache.in_w;
  const int oh = out_size(h);
  const int ow = out_size(w);
  const int rows = cin_ * 9;
  const int cols = oh * ow;
  ConstRowMap<T> dy(dout.data(), cout_, cols);
  ConstRowMap<T> col(cache.cols.data(), rows, cols);
  RowMap<T> dweight(grads[weight_].data(), cout_, rows);
  dweight.noalias() += dy * col.transpose();
  T* dbias = grads[bias_].data();
  for (int r = 0; r < cout_; ++r) {
    const T* row = dout.data() + static_cast<size_t>(r) * cols;
    T acc = T(0);
    for (int c = 0; c < cols; ++c) acc += row[c];
    dbias[r] += acc;
  }
  if (din == nullptr) return;

  RowMat<T> dcol(rows, cols);
  ConstRowMap<T> weight(params.values[weight_].data(), cout_, rows);
  dcol.noalias() = weight.transpose() * dy;
  din->assign(static_cast<size_t>(cin_) * h * w, T(0));
  for (int c = 0; c < cin_; ++c) {
    for (int ki = 0; ki < 3; ++ki) {
      for (int kj = 0; kj < 3; ++kj) {
        const T* row = dcol.data() + static_cast<size_t>(c * 9 + ki * 3 + kj) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = 2 * oy + ki - 1;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = 2 * ox + kj - 1;
            if (ix < 0 || ix >= w) continue;
            (*din)[(static_cast<size_t>(c) * h + iy) * w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// GroupNorm

template <typename T>
GroupNorm<T>::GroupNorm(ParamSet<T>& params, const std::string& name, int channels, int groups)
    : channels_(channels), groups_(groups) {
  if (groups < 1 || channels % groups != 0) {
    fail(ErrorCode::kConfig, "group count must divide channel count for " + name);
  }
  gamma_ = params.add(name + ".gamma", {channels});
  beta_ = params.add(name + ".beta", {channels});
}

template <typename T>
void GroupNorm<T>::init(ParamSet<T>& params) const {
  std::fill(params.values[gamma_].begin(), params.values[gamma_].end(), T(1));
  std::fill(params.values[beta_].begin(), params.values[beta_].end(), T(0));
}

template <typename T>
void GroupNorm<T>::forward(const ParamSet<T>& params, const std::vector<T>& in, int spatial,
                           std::vector<T>& out, Cache& cache) const {
  constexpr double kEps = 1e-5;
  const int per_group = channels_ / groups_;
  const size_t group_size = static_cast<size_t>(per_group) * spatial;
  out.resize(in.size());
  cache.xhat.resize(in.size());
  cache.inv_std.resize(static_cast<size_t>(groups_));
  const auto& gamma = params.values[gamma_];
  const auto& beta = params.values[beta_];
  for (int g = 0; g < groups_; ++g) {
    const size_t base = static_cast<size_t>(g) * group_size;
    double mean = 0.0;
    for (size_t i = 0; i < group_size; ++i) mean += in[base + i];
    mean /= static_cast<double>(group_size);
    double var = 0.0;
    for (size_t i = 0; i < group_size; ++i) {
      const double d = in[base + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(group_size);
    const T inv_std = static_cast<T>(1.0 / std::sqrt(var + kEps));
    cache.inv_std[static_cast<size_t>(g)] = inv_std;
    for (int c = 0; c < per_group; ++c) {
      const int ch = g * per_group + c;
      for (int s = 0; s < spatial; ++s) {
        const size_t i = static_cast<size_t>(ch) * spatial + s;
        const T xh = (in[i] - static_cast<T>(mean)) * inv_std;
        cache.xhat[i] = xh;
        out[i] = gamma[static_cast<size_t>(ch)] * xh + beta[static_cast<size_t>(ch)];
      }
    }
  }
}

template <typename T>
void GroupNorm<T>::backward(const ParamSet<T>& params, const Cache& cache,
                            const std::vector<T>& dout, int spatial, GradSet<T>& grads,
                            std::vector<T>& din) const {
  const int per_group = channels_ / groups_;
  const auto n = static_cast<T>(per_group * spatial);
  const auto& gamma = params.values[gamma_];
  auto& dgamma = grads[gamma_];
  auto& dbeta = grads[beta_];
  din.resize(dout.size());
  for (int g = 0; g < groups_; ++g) {
    T sum_dxh = T(0);
    T sum_dxh_xh = T(0);
    for (int c = 0; c < per_group; ++c) {
      const int ch = g * per_group + c;
      for (int s = 0; s < spatial; ++s) {
        const size_t i = static_cast<size_t>(ch) * spatial + s;
        dgamma[static_cast<size_t>(ch)] += dout[i] * cache.xhat[i];
        dbeta[static_cast<size_t>(ch)] += dout[i];
        const T dxh = dout[i] * gamma[static_cast<size_t>(ch)];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * cache.xhat[i];
      }
    }
    const T inv_std = cache.inv_std[static_cast<size_t>(g)];
    for (int c = 0; c < per_group; ++c) {
      const int ch = g * per_group + c;
      for (int s = 0; s < spatial; ++s) {
        const size_t i = static_cast<size_t>(ch) * spatial + s;
        const T dxh = dout[i] * gamma[static_cast<size_t>(ch)];
        din[i] = inv_std * (dxh - sum_dxh / n - cache.xhat[i] * sum_dxh_xh / n);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(ParamSet<T>& params, const std::string& name, int in_features,
                  int out_features)
    : in_(in_features), out_(out_features) {
  weight_ = params.add(name + ".weight", {out_features, in_features});
  bias_ = params.add(name + ".bias", {out_features});
}

template <typename T>
void Linear<T>::init(ParamSet<T>& params, std::mt19937_64& rng, double gain) const {
  he_normal(params.values[weight_], in_, rng, gain);
  std::fill(params.values[bias_].begin(), params.values[bias_].end(), T(0));
}

template <typename T>
void Linear<T>::forward(const ParamSet<T>& params, const std::vector<T>& in,
                        std::vector<T>& out) const {
  out.resize(static_cast<size_t>(out_));
  ConstRowMap<T> weight(params.values[weight_].data(), out_, in_);
  ConstVecMap<T> x(in.data(), in_);
  VecMap<T> y(out.data(), out_);
  y.noalias() = weight * x;
  y += ConstVecMap<T>(params.values[bias_].data(), out_);
}

template <typename T>
void Linear<T>::backward(const ParamSet<T>& params, const std::vector<T>& in,
                         const std::vector<T>& dout, GradSet<T>& grads,
                         std::vector<T>* din) const {
  ConstVecMap<T> x(in.data(), in_);
  ConstVecMap<T> dy(dout.data(), out_);
  RowMap<T> dweight(grads[weight_].data(), out_, in_);
  dweight.noalias() += dy * x.transpose();
  VecMap<T>(grads[bias_].data(), out_) += dy;
  if (din == nullptr) return;
  din->resize(static_cast<size_t>(in_));
  ConstRowMap<T> weight(params.values[weight_].data(), out_, in_);
  VecMap<T>(din->data(), in_).noalias() = weight.transpose() * dy;
}

template <typename T>
void relu_inplace(std::vector<T>& x) {
  for (auto& v : x) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward_inplace(const std::vector<T>& activated, std::vector<T>& dx) {
  for (size_t i = 0; i < dx.size(); ++i) {
    if (!(activated[i] > T(0))) dx[i] = T(0);
  }
}

#define FLOWPARTS_INSTANTIATE_NN(T)                                                    \
  template struct ParamSet<T>;                                                         \
  template void zero_grads<T>(GradSet<T>&);                                            \
  template void he_normal<T>(std::vector<T>&, int, std::mt19937_64&, double);          \
  template class Conv2d<T>;                                                            \
  template class GroupNorm<T>;                                                         \
  template class Linear<T>;                                                            \
  template void relu_inplace<T>(std::vector<T>&);                                      \
  template void relu_backward_inplace<T>(const std::vector<T>&, std::vector<T>&);

FLOWPARTS_INSTANTIATE_NN(float)
FLOWPARTS_INSTANTIATE_NN(double)

}  // namespace flowparts
