#include "dms/synth.hpp"

#include <cstdio>
#include <fstream>

#include "dms/errors.hpp"

namespace dms {

namespace {

// Mean band vectors for the shared core texture and the two edge textures.
double texture_mean(int texture, int band) {
  static constexpr double kMeans[3][3] = {
      {0.50, 0.50, 0.50},  // core
      {0.90, 0.20, 0.55},  // class 0 edge
      {0.15, 0.80, 0.45},  // class 1 edge
  };
  return kMeans[texture][band % 3];
}

}  // namespace

RasterScene synth_scene(const SynthOptions& o, std::uint64_t scene_index) {
  if (o.height < 1 || o.width < 1 || o.bands < 1 || o.core_width < 1 || o.edge_width < 1) {
    throw ConfigError("synthetic dataset extents must be positive");
  }
  if (!(o.void_fraction >= 0.0 && o.void_fraction < 1.0)) throw ConfigError("void fraction must be in [0, 1)");
  Rng rng = Rng::derive(o.seed, scene_index);
  const auto H = static_cast<std::size_t>(o.height);
  const auto W = static_cast<std::size_t>(o.width);
  const int cell = o.cell_size();
  const auto off_y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cell)));
  const auto off_x = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cell)));

  Tensor<float> bands(Shape{1, static_cast<std::size_t>(o.bands), H, W});
  LabelMap labels{W, H, std::vector<std::uint8_t>(H * W)};
  for (std::size_t y = 0; y < H; ++y) {
    const int cy = (static_cast<int>(y) + off_y) / cell;
    const int in_cell = (static_cast<int>(y) + off_y) % cell;
    const bool core = in_cell >= o.edge_width && in_cell < o.edge_width + o.core_width;
    for (std::size_t x = 0; x < W; ++x) {
      const int cx = (static_cast<int>(x) + off_x) / cell;
      const int cls = (cy + cx) % 2;
      const int texture = core ? 0 : 1 + cls;
      labels.values[y * W + x] = static_cast<std::uint8_t>(cls);
      for (int b = 0; b < o.bands; ++b) {
        bands.at(0, static_cast<std::size_t>(b), y, x) =
            static_cast<float>(texture_mean(texture, b) + o.noise * rng.normal());
      }
    }
  }
  if (o.void_fraction > 0.0) {
    for (auto& v : labels.values) {
      if (rng.uniform() < o.void_fraction) v = kVoidLabel;
    }
  }
  char id[32];
  std::snprintf(id, sizeof id, "scene_%03llu", static_cast<unsigned long long>(scene_index));
  return make_scene(id, std::move(bands), labels);
}

std::vector<RasterScene> synth_scenes(const SynthOptions& options) {
  std::vector<RasterScene> out;
  for (int i = 0; i < options.scenes; ++i) out.push_back(synth_scene(options, static_cast<std::uint64_t>(i)));
  return out;
}

void write_synth_dataset(const std::filesystem::path& dir, const SynthOptions& o) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw DataError("cannot write '" + (dir / "manifest.txt").string() + "'");
  manifest << "# synthetic striped two-class texture dataset\n"
           << "seed = " << o.seed << "\n"
           << "scenes = " << o.scenes << "\n"
           << "height = " << o.height << "\n"
           << "width = " << o.width << "\n"
           << "bands = " << o.bands << "\n"
           << "classes = 2\n"
           << "texture_scale = " << o.core_width << "\n"
           << "edge_width = " << o.edge_width << "\n"
           << "cell_size = " << o.cell_size() << "\n"
           << "noise = " << o.noise << "\n"
           << "void_fraction = " << o.void_fraction << "\n"
           << "# patches smaller than this can fall entirely inside a shared core stripe\n"
           << "min_separable_size = " << o.min_separable_size() << "\n";
  for (int i = 0; i < o.scenes; ++i) {
    const RasterScene s = synth_scene(o, static_cast<std::uint64_t>(i));
    const std::string image = s.id + ".rsrf";
    const std::string label = s.id + ".rslb";
    save_scene(s, dir / image, dir / label);
    manifest << "scene = " << image << ":" << label << "\n";
  }
}

}  // namespace dms
