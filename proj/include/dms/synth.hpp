#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dms/data.hpp"

namespace dms {

/// Two-class striped texture. Every checkerboard cell is three horizontal
/// stripes, edge / core / edge. Core stripes share one noise texture in both
/// classes; edge stripes use a class-specific texture. A pixel in a core
/// stripe can only be classified by seeing an edge stripe of its own cell,
/// so windows smaller than about core_width + 1 are ambiguous there.
struct SynthOptions {
  int scenes = 4;
  int height = 192;
  int width = 192;
  int bands = 3;
  int core_width = 24;  // texture scale
  int edge_width = 12;
  double noise = 0.35;
  double void_fraction = 0.0;
  std::uint64_t seed = 1;

  int cell_size() const { return 2 * edge_width + core_width; }
  /// Smallest square window guaranteed to contain an edge stripe.
  int min_separable_size() const { return core_width + 1; }
};

RasterScene synth_scene(const SynthOptions& options, std::uint64_t scene_index);
std::vector<RasterScene> synth_scenes(const SynthOptions& options);

/// Writes scene_XXX.rsrf / scene_XXX.rslb and manifest.txt under `dir`.
void write_synth_dataset(const std::filesystem::path& dir, const SynthOptions& options);

}  // namespace dms
