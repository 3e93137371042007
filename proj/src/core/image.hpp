#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace flowparts {

// Interleaved H x W x C float image, values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * w * c, fill) {}

  float& at(int i, int j, int c) {
    return data[(static_cast<size_t>(i) * width + j) * channels + c];
  }
  float at(int i, int j, int c) const {
    return data[(static_cast<size_t>(i) * width + j) * channels + c];
  }
};

// Dense frame-1 -> frame-2 displacement in pixels, interleaved (u, v).
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FlowField() = default;
  FlowField(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 2, 0.0f) {}

  float& u(int i, int j) { return data[(static_cast<size_t>(i) * width + j) * 2]; }
  float& v(int i, int j) { return data[(static_cast<size_t>(i) * width + j) * 2 + 1]; }
  float u(int i, int j) const { return data[(static_cast<size_t>(i) * width + j) * 2]; }
  float v(int i, int j) const { return data[(static_cast<size_t>(i) * width + j) * 2 + 1]; }
};

// Binary H x W mask stored as 0/1 bytes.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}

  size_t count() const;
};

// 8-bit PNG with 1 (gray) or 3 (RGB) channels.
struct PngData {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> bytes;
};

void write_png(const std::filesystem::path& path, const PngData& png);
PngData read_png(const std::filesystem::path& path, int channels);

uint8_t quantize_unit(float value);
PngData image_to_png(const Image& image);
Image png_to_image(const PngData& png);
PngData mask_to_png(const BinaryMask& mask);
BinaryMask png_to_mask(const PngData& png);

// Middlebury .flo: "PIEH" float sentinel, int32 width, int32 height, then
// row-major interleaved float32 (u, v); all little-endian.
inline constexpr float kFloSentinel = 202021.25f;
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);
std::vector<uint8_t> encode_flo(const FlowField& flow);
FlowField decode_flo(const std::vector<uint8_t>& bytes, const std::string& source);

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);

}  // namespace flowparts
