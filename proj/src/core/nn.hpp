#pragma once

// Minimal layer set with explicit forward/backward passes. Activations are
// channel-major (C x H x W) per sample; weights live in a ParamSet so the
// optimizer and checkpoint code can treat every model uniformly.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace flowparts {

template <typename T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<std::vector<int>> shapes;
  std::vector<std::vector<T>> values;

  int add(std::string name, std::vector<int> shape);
  int find(const std::string& name) const;  // -1 if absent
  size_t size() const { return values.size(); }
  size_t total_count() const;
  std::vector<std::vector<T>> zeros_like() const;
};

template <typename T>
using GradSet = std::vector<std::vector<T>>;

template <typename T>
void zero_grads(GradSet<T>& grads);

template <typename T>
void he_normal(std::vector<T>& w, int fan_in, std::mt19937_64& rng, double gain = 1.0);

// 3x3 / stride 2 / pad 1 convolution (im2col + GEMM).
template <typename T>
class Conv2d {
 public:
  struct Cache {
    std::vector<T> cols;
    int in_h = 0;
    int in_w = 0;
  };

  Conv2d() = default;
  Conv2d(ParamSet<T>& params, const std::string& name, int in_channels, int out_channels);

  static int out_size(int n) { return (n - 1) / 2 + 1; }
  int out_channels() const { return cout_; }
  void init(ParamSet<T>& params, std::mt19937_64& rng) const;

  void forward(const ParamSet<T>& params, const std::vector<T>& in, int h, int w,
               std::vector<T>& out, Cache& cache) const;
  void backward(const ParamSet<T>& params, const Cache& cache, const std::vector<T>& dout,
                GradSet<T>& grads, std::vector<T>* din) const;

 private:
  int cin_ = 0;
  int cout_ = 0;
  int weight_ = -1;
  int bias_ = -1;
};

// Group normalization with per-channel affine parameters.
template <typename T>
class GroupNorm {
 public:
  struct Cache {
    std::vector<T> xhat;
    std::vector<T> inv_std;
  };

  GroupNorm() = default;
  GroupNorm(ParamSet<T>& params, const std::string& name, int channels, int groups);

  void init(ParamSet<T>& params) const;
  void forward(const ParamSet<T>& params, const std::vector<T>& in, int spatial,
               std::vector<T>& out, Cache& cache) const;
  void backward(const ParamSet<T>& params, const Cache& cache, const std::vector<T>& dout,
                int spatial, GradSet<T>& grads, std::vector<T>& din) const;

 private:
  int channels_ = 0;
  int groups_ = 1;
  int gamma_ = -1;
  int beta_ = -1;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamSet<T>& params, const std::string& name, int in_features, int out_features);

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  void init(ParamSet<T>& params, std::mt19937_64& rng, double gain = 1.0) const;

  void forward(const ParamSet<T>& params, const std::vector<T>& in, std::vector<T>& out) const;
  void backward(const ParamSet<T>& params, const std::vector<T>& in, const std::vector<T>& dout,
                GradSet<T>& grads, std::vector<T>* din) const;

  int weight_index() const { return weight_; }
  int bias_index() const { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  int weight_ = -1;
  int bias_ = -1;
};

template <typename T>
void relu_inplace(std::vector<T>& x);

// Zeroes dx where the post-activation output is not positive.
template <typename T>
void relu_backward_inplace(const std::vector<T>& activated, std::vector<T>& dx);

}  // namespace flowparts
