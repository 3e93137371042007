#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "image.hpp"

namespace flowparts {

// Middlebury color wheel (55 hues: RY 15, YG 6, GC 4, CB 11, BM 13, MR 6).
const std::vector<std::array<uint8_t, 3>>& color_wheel();

// Color for a flow vector already normalized by the maximum radius.
std::array<uint8_t, 3> flow_color(double fx, double fy);

// Flow image normalized by its own maximum radius.
PngData flow_to_color(const FlowField& flow);

PngData mask_to_gray(const float* mask, int height, int width);

// Blends a palette color per capsule, weighted by visibility, over the image.
PngData visibility_overlay(const Image& image, const std::vector<float>& visible, int num_masks);

}  // namespace flowparts
