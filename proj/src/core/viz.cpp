#include "viz.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "error.hpp"

namespace flowparts {

const std::vector<std::array<uint8_t, 3>>& color_wheel() {
  static const auto wheel = [] {
    std::vector<std::array<uint8_t, 3>> w;
    auto ramp = [](int i, int n) { return static_cast<uint8_t>(255 * i / n); };
    constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    for (int i = 0; i < RY; ++i) w.push_back({255, ramp(i, RY), 0});
    for (int i = 0; i < YG; ++i) w.push_back({static_cast<uint8_t>(255 - ramp(i, YG)), 255, 0});
    for (int i = 0; i < GC; ++i) w.push_back({0, 255, ramp(i, GC)});
    for (int i = 0; i < CB; ++i) w.push_back({0, static_cast<uint8_t>(255 - ramp(i, CB)), 255});
    for (int i = 0; i < BM; ++i) w.push_back({ramp(i, BM), 0, 255});
    for (int i = 0; i < MR; ++i) w.push_back({255, 0, static_cast<uint8_t>(255 - ramp(i, MR))});
    return w;
  }();
  return wheel;
}

std::array<uint8_t, 3> flow_color(double fx, double fy) {
  const auto& wheel = color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  const double rad = std::sqrt(fx * fx + fy * fy);
  const double a = std::atan2(-fy, -fx) / std::numbers::pi;
  const double fk = (a + 1.0) / 2.0 * (ncols - 1);
  const int k0 = static_cast<int>(std::floor(fk));
  const int k1 = (k0 + 1) % ncols;
  const double f = fk - k0;
  std::array<uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const double c0 = wheel[static_cast<size_t>(k0)][static_cast<size_t>(c)] / 255.0;
    const double c1 = wheel[static_cast<size_t>(k1)][static_cast<size_t>(c)] / 255.0;
    double col = (1.0 - f) * c0 + f * c1;
    if (rad <= 1.0) {
      col = 1.0 - rad * (1.0 - col);
    } else {
      col *= 0.75;
    }
    out[static_cast<size_t>(c)] = static_cast<uint8_t>(std::floor(255.0 * col));
  }
  return out;
}

PngData flow_to_color(const FlowField& flow) {
  double max_rad = 0.0;
  const size_t n = static_cast<size_t>(flow.height) * flow.width;
  for (size_t p = 0; p < n; ++p) {
    const double u = flow.data[2 * p];
    const double v = flow.data[2 * p + 1];
    max_rad = std::max(max_rad, std::sqrt(u * u + v * v));
  }
  const double scale = 1.0 / std::max(max_rad, 1e-12);
  PngData png{flow.height, flow.width, 3, std::vector<uint8_t>(n * 3)};
  for (size_t p = 0; p < n; ++p) {
    const auto c = flow_color(flow.data[2 * p] * scale, flow.data[2 * p + 1] * scale);
    std::copy(c.begin(), c.end(), png.bytes.begin() + static_cast<std::ptrdiff_t>(3 * p));
  }
  return png;
}

PngData mask_to_gray(const float* mask, int height, int width) {
  PngData png{height, width, 1, std::vector<uint8_t>(static_cast<size_t>(height) * width)};
  for (size_t p = 0; p < png.bytes.size(); ++p) png.bytes[p] = quantize_unit(mask[p]);
  return png;
}

PngData visibility_overlay(const Image& image, const std::vector<float>& visible, int num_masks) {
  static constexpr std::array<std::array<float, 3>, 10> kPalette = {{
      {0.90f, 0.10f, 0.29f}, {0.24f, 0.71f, 0.29f}, {1.00f, 0.88f, 0.10f}, {0.00f, 0.51f, 0.78f},
      {0.96f, 0.51f, 0.19f}, {0.57f, 0.12f, 0.71f}, {0.27f, 0.94f, 0.94f}, {0.94f, 0.20f, 0.90f},
      {0.82f, 0.96f, 0.24f}, {0.98f, 0.75f, 0.83f},
  }};
  const size_t n = static_cast<size_t>(image.height) * image.width;
  if (visible.size() != n * num_masks || image.channels != 3) {
    fail(ErrorCode::kShape, "visibility_overlay: sizes disagree");
  }
  Image out(image.height, image.width, 3);
  for (size_t p = 0; p < n; ++p) {
    for (int c = 0; c < 3; ++c) {
      float tint = 0.0f;
      for (int k = 0; k < num_masks; ++k) {
        tint += visible[static_cast<size_t>(k) * n + p] *
                kPalette[static_cast<size_t>(k) % kPalette.size()][static_cast<size_t>(c)];
      }
      out.data[p * 3 + c] = 0.5f * image.data[p * 3 + c] + 0.5f * tint;
    }
  }
  return image_to_png(out);
}

}  // namespace flowparts
