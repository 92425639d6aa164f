#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dms/data.hpp"
#include "dms/models.hpp"

namespace dms {

struct Prediction {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> classes;  // (H, W) argmax of mean probabilities
  std::vector<float> confidence;  // winning mean probability
  Tensor<float> probabilities;  // (1, C, H, W) mean softmax, if requested
  std::vector<std::uint32_t> coverage;  // tiles covering each pixel
};

struct TilingPlan {
  std::size_t stride = 1;
  std::vector<std::size_t> row_origins;
  std::vector<std::size_t> col_origins;
  std::size_t padded_height = 0;
  std::size_t padded_width = 0;
};

/// Square tiles of side `size` on a grid with stride floor(size * (1 - overlap)),
/// at least 1, extended until every pixel is covered.
TilingPlan plan_tiles(std::size_t height, std::size_t width, int size, double overlap);

/// Dense prediction by tiling, averaging per-class softmax over overlapping
/// tiles in grid order, then taking the per-pixel argmax. Border tiles read
/// reflection-padded data.
Prediction predict_scene(const NetworkSpec& spec, const Params<float>& params, const RasterScene& scene, int size,
                         double overlap = 0.0, bool keep_probabilities = false, std::size_t tiles_per_batch = 4);

using Rgb = std::array<std::uint8_t, 3>;
using Palette = std::vector<Rgb>;

/// Named palettes: "coffee" (0 non-coffee black, 1 coffee white), "isprs"
/// (impervious, building, low vegetation, tree, car, clutter) and "default".
Palette named_palette(std::string_view name, std::size_t classes);

/// RGB rendering; void pixels (mask nonzero) and classes without a colour are black.
Image8 render_map(std::span<const std::uint8_t> classes, std::size_t width, std::size_t height,
                  const Palette& palette, std::span<const std::uint8_t> void_mask = {});

/// Inverse of render_map for colours in the palette; first matching class wins.
std::vector<std::uint8_t> decode_map(const Image8& image, const Palette& palette);

}  // namespace dms
