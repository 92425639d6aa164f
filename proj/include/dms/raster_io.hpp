#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dms/tensor.hpp"

namespace dms {

inline constexpr std::uint8_t kVoidLabel = 255;

/// RSRF: "RSRF", u32 width, height, bands, dtype (0 = f32), then band-sequential
/// row-major f32 samples. Tensor shape is (1, bands, height, width).
Tensor<float> read_rsrf(const std::filesystem::path& path);
void write_rsrf(const std::filesystem::path& path, const Tensor<float>& bands);

struct LabelMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> values;  // row-major, kVoidLabel = void
  bool operator==(const LabelMap&) const = default;
};

/// RSLB: "RSLB", u32 width, height, then row-major u8 class indices.
LabelMap read_rslb(const std::filesystem::path& path);
void write_rslb(const std::filesystem::path& path, const LabelMap& labels);

/// 8-bit PNG as interleaved samples; channels is 1, 2, 3 or 4.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

}  // namespace dms
