#include "image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "error.hpp"

namespace flowparts {

size_t BinaryMask::count() const {
  return static_cast<size_t>(std::count_if(data.begin(), data.end(),
                                           [](uint8_t v) { return v != 0; }));
}

namespace {

png_uint_32 png_format(int channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    default:
      fail(ErrorCode::kInvalidArgument,
           "unsupported PNG channel count " + std::to_string(channels));
  }
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<uint8_t>(v >> (8 * b)));
}

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

void write_png(const std::filesystem::path& path, const PngData& png) {
  if (png.bytes.size() != static_cast<size_t>(png.height) * png.width * png.channels) {
    fail(ErrorCode::kShape, "PNG buffer size mismatch for " + path.string());
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(png.width);
  img.height = static_cast<png_uint_32>(png.height);
  img.format = png_format(png.channels);
  if (!png_image_write_to_file(&img, path.c_str(), 0, png.bytes.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    fail(ErrorCode::kIo, "failed to write " + path.string() + ": " + msg);
  }
}

PngData read_png(const std::filesystem::path& path, int channels) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    std::string msg = img.message;
    png_image_free(&img);
    fail(ErrorCode::kIo, "failed to read " + path.string() + ": " + msg);
  }
  img.format = png_format(channels);
  PngData out;
  out.height = static_cast<int>(img.height);
  out.width = static_cast<int>(img.width);
  out.channels = channels;
  out.bytes.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.bytes.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    fail(ErrorCode::kIo, "failed to decode " + path.string() + ": " + msg);
  }
  return out;
}

uint8_t quantize_unit(float value) {
  const float clamped = std::clamp(value, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(clamped * 255.0f));
}

PngData image_to_png(const Image& image) {
  PngData png{image.height, image.width, image.channels, {}};
  png.bytes.resize(image.data.size());
  std::transform(image.data.begin(), image.data.end(), png.bytes.begin(), quantize_unit);
  return png;
}

Image png_to_image(const PngData& png) {
  Image image(png.height, png.width, png.channels);
  std::transform(png.bytes.begin(), png.bytes.end(), image.data.begin(),
                 [](uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return image;
}

PngData mask_to_png(const BinaryMask& mask) {
  PngData png{mask.height, mask.width, 1, {}};
  png.bytes.resize(mask.data.size());
  std::transform(mask.data.begin(), mask.data.end(), png.bytes.begin(),
                 [](uint8_t v) { return static_cast<uint8_t>(v ? 255 : 0); });
  return png;
}

BinaryMask png_to_mask(const PngData& png) {
  BinaryMask mask(png.height, png.width);
  std::transform(png.bytes.begin(), png.bytes.end(), mask.data.begin(),
                 [](uint8_t b) { return static_cast<uint8_t>(b >= 128 ? 1 : 0); });
  return mask;
}

std::vector<uint8_t> encode_flo(const FlowField& flow) {
  std::vector<uint8_t> out;
  out.reserve(12 + flow.data.size() * 4);
  put_u32(out, std::bit_cast<uint32_t>(kFloSentinel));
  put_u32(out, static_cast<uint32_t>(flow.width));
  put_u32(out, static_cast<uint32_t>(flow.height));
  for (float f : flow.data) put_u32(out, std::bit_cast<uint32_t>(f));
  return out;
}

FlowField decode_flo(const std::vector<uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < 12) fail(ErrorCode::kIo, source + ": truncated .flo header");
  if (std::bit_cast<float>(get_u32(bytes.data())) != kFloSentinel) {
    fail(ErrorCode::kIo, source + ": bad .flo sentinel");
  }
  const auto width = static_cast<int32_t>(get_u32(bytes.data() + 4));
  const auto height = static_cast<int32_t>(get_u32(bytes.data() + 8));
  if (width < 1 || height < 1) fail(ErrorCode::kIo, source + ": bad .flo dimensions");
  FlowField flow(height, width);
  if (bytes.size() != 12 + flow.data.size() * 4) {
    fail(ErrorCode::kIo, source + ": .flo payload size mismatch");
  }
  for (size_t i = 0; i < flow.data.size(); ++i) {
    flow.data[i] = std::bit_cast<float>(get_u32(bytes.data() + 12 + 4 * i));
  }
  return flow;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  write_file_bytes(path, encode_flo(flow));
}

FlowField read_flo(const std::filesystem::path& path) {
  return decode_flo(read_file_bytes(path), path.string());
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace flowparts
