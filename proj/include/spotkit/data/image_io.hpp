#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace spotkit::data {

/// 8-bit interleaved image, row-major.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;
};

/// Lossless 8-bit PNG with fixed encoder settings, so equal images give equal bytes.
void write_png(const std::filesystem::path& path, const Image& image);
/// Decodes .png or .jpg/.jpeg into 8-bit RGB.
Image read_image(const std::filesystem::path& path);

/// Two-channel optical flow field, row-major (dx, dy) pairs.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<float> values;
};

/// "FLO2" container: 4-byte magic, uint32 height, uint32 width, uint32 channel
/// count (= 2), then float32 pairs row-major; all little-endian.
void write_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow(const std::filesystem::path& path);

/// `<dir>/<%06d>.<ext>`
std::filesystem::path frame_path(const std::filesystem::path& dir, int index, const char* ext);

}  // namespace spotkit::data
