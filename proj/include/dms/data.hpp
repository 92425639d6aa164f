#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dms/raster_io.hpp"
#include "dms/rng.hpp"
#include "dms/tensor.hpp"

namespace dms {

/// Multi-band image with a dense class map and a separate void mask.
struct RasterScene {
  std::string id;
  Tensor<float> bands;  // (1, B, H, W)
  std::vector<std::uint8_t> labels;  // (H, W); 0 where void
  std::vector<std::uint8_t> void_mask;  // (H, W); 1 = unlabeled

  std::size_t height() const { return bands.shape().h; }
  std::size_t width() const { return bands.shape().w; }
  std::size_t band_count() const { return bands.shape().c; }
  std::size_t void_count() const;
  /// Labels with void pixels written back as kVoidLabel.
  LabelMap label_map() const;
};

/// Builds a scene from bands and an RSLB-style label map (255 = void).
RasterScene make_scene(std::string id, Tensor<float> bands, const LabelMap& labels);

/// Images: .rsrf or 8-bit PNG (scaled to [0,1], alpha dropped).
/// Labels: .rslb or grayscale PNG. Without labels every pixel is void.
RasterScene load_scene(const std::filesystem::path& image_path,
                       const std::optional<std::filesystem::path>& label_path = std::nullopt);

void save_scene(const RasterScene& scene, const std::filesystem::path& image_path,
                const std::filesystem::path& label_path);

/// Per-band affine normalization fitted over non-void training pixels.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static constexpr double kStdFloor = 1e-6;

  void apply(RasterScene& scene) const;
  std::string to_text() const;
  static Normalizer from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Normalizer load(const std::filesystem::path& path);
};

Normalizer fit_normalizer(std::span<const RasterScene> scenes);

struct PatchBatch {
  Tensor<float> inputs;  // (N, B, size, size)
  std::vector<std::uint8_t> labels;  // (N, size, size)
  std::vector<std::uint8_t> void_mask;
  int size = 0;
};

/// Mirror index for reflection padding (edge sample not repeated), periodic
/// for offsets beyond one reflection.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

/// Whether `size` fits the scene after at most one reflection per side.
bool scene_accepts_size(const RasterScene& scene, int size);

/// Draws N patches: a scene uniformly among those accepting `size`, then a
/// top-left corner uniformly over valid positions. Scenes smaller than `size`
/// are reflection-padded. With class_balance, the center pixel's class is
/// first drawn uniformly over classes present in the chosen scene.
PatchBatch extract_batch(std::span<const RasterScene> scenes, int size, int batch_size, Rng& rng,
                         bool class_balance = false);

/// Copy of the scene window at (top, left), reflection-padding as needed.
/// Coordinates are in the padded frame used by extract_batch.
void copy_window(const RasterScene& scene, int size, std::size_t top, std::size_t left, PatchBatch& batch,
                 std::size_t slot);

}  // namespace dms
