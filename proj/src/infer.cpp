#include "dms/infer.hpp"

#include <algorithm>
#include <cmath>

#include "dms/errors.hpp"

namespace dms {

TilingPlan plan_tiles(std::size_t height, std::size_t width, int size, double overlap) {
  if (size < 1) throw std::invalid_argument("tile size must be >= 1");
  if (!(overlap >= 0.0 && overlap <= 0.9)) throw std::invalid_argument("overlap must be in [0, 0.9]");
  if (height == 0 || width == 0) throw DataError("cannot tile an empty scene");
  const auto lam = static_cast<std::size_t>(size);
  TilingPlan plan;
  plan.stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(size) * (1.0 - overlap))));
  auto origins = [&](std::size_t n) {
    std::vector<std::size_t> o = {0};
    while (o.back() + lam < n) o.push_back(o.back() + plan.stride);
    return o;
  };
  plan.row_origins = origins(height);
  plan.col_origins = origins(width);
  plan.padded_height = plan.row_origins.back() + lam;
  plan.padded_width = plan.col_origins.back() + lam;
  return plan;
}

Prediction predict_scene(const NetworkSpec& spec, const Params<float>& params, const RasterScene& scene, int size,
                         double overlap, bool keep_probabilities, std::size_t tiles_per_batch) {
  if (scene.band_count() != static_cast<std::size_t>(spec.in_channels)) {
    throw DataError("scene '" + scene.id + "' has " + std::to_string(scene.band_count()) + " bands, network expects " +
                    std::to_string(spec.in_channels));
  }
  const TilingPlan plan = plan_tiles(scene.height(), scene.width(), size, overlap);
  const std::size_t H = scene.height();
  const std::size_t W = scene.width();
  const auto C = static_cast<std::size_t>(spec.num_classes);
  const auto lam = static_cast<std::size_t>(size);
  const std::size_t B = scene.band_count();
  tiles_per_batch = std::max<std::size_t>(1, tiles_per_batch);

  std::vector<double> prob_sum(C * H * W, 0.0);
  std::vector<std::uint32_t> coverage(H * W, 0);

  struct Origin {
    std::size_t top;
    std::size_t left;
  };
  std::vector<Origin> tiles;
  for (auto r : plan.row_origins) {
    for (auto c : plan.col_origins) tiles.push_back({r, c});
  }

  std::vector<double> p(C);
  for (std::size_t first = 0; first < tiles.size(); first += tiles_per_batch) {
    const std::size_t count = std::min(tiles_per_batch, tiles.size() - first);
    Tensor<float> batch(Shape{count, B, lam, lam});
    for (std::size_t k = 0; k < count; ++k) {
      const Origin& o = tiles[first + k];
      for (std::size_t b = 0; b < B; ++b) {
        const float* src = scene.bands.plane(0, b);
        float* dst = batch.plane(k, b);
        for (std::size_t y = 0; y < lam; ++y) {
          // trailing reflection: the grid starts at the scene origin
          const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(o.top + y), H);
          for (std::size_t x = 0; x < lam; ++x) {
            dst[y * lam + x] = src[sy * W + reflect_index(static_cast<std::ptrdiff_t>(o.left + x), W)];
          }
        }
      }
    }
    const Tensor<float> logits = forward(spec, params, batch);
    for (std::size_t k = 0; k < count; ++k) {
      const Origin& o = tiles[first + k];
      for (std::size_t y = 0; y < lam && o.top + y < H; ++y) {
        for (std::size_t x = 0; x < lam && o.left + x < W; ++x) {
          const std::size_t q = y * lam + x;
          double mx = -INFINITY;
          for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits.plane(k, c)[q]));
          double z = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            p[c] = std::exp(static_cast<double>(logits.plane(k, c)[q]) - mx);
            z += p[c];
          }
          const std::size_t pix = (o.top + y) * W + (o.left + x);
          for (std::size_t c = 0; c < C; ++c) prob_sum[c * H * W + pix] += p[c] / z;
          ++coverage[pix];
        }
      }
    }
  }

  Prediction out;
  out.width = W;
  out.height = H;
  out.classes.resize(H * W);
  out.confidence.resize(H * W);
  if (keep_probabilities) out.probabilities = Tensor<float>(Shape{1, C, H, W});
  for (std::size_t pix = 0; pix < H * W; ++pix) {
    const double inv = 1.0 / static_cast<double>(coverage[pix]);
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double v = prob_sum[c * H * W + pix] * inv;
      if (keep_probabilities) out.probabilities.plane(0, c)[pix] = static_cast<float>(v);
      if (v > best) {
        best = v;
        arg = c;
      }
    }
    out.classes[pix] = static_cast<std::uint8_t>(arg);
    out.confidence[pix] = static_cast<float>(best);
  }
  out.coverage = std::move(coverage);
  return out;
}

Palette named_palette(std::string_view name, std::size_t classes) {
  Palette p;
  if (name == "coffee") {
    p = {{0, 0, 0}, {255, 255, 255}};
  } else if (name == "isprs") {
    p = {{255, 255, 255}, {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
  } else if (name == "default") {
    p = {{230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48}, {145, 30, 180},
         {70, 240, 240}, {240, 50, 230},  {210, 245, 60}, {250, 190, 212}, {0, 128, 128}, {220, 190, 255},
         {170, 110, 40}, {255, 250, 200}, {128, 0, 0},    {170, 255, 195}};
  } else {
    throw ConfigError("unknown palette '" + std::string(name) + "'");
  }
  if (classes > p.size()) {
    throw ConfigError("palette '" + std::string(name) + "' has " + std::to_string(p.size()) + " colours, need " +
                      std::to_string(classes));
  }
  return p;
}

Image8 render_map(std::span<const std::uint8_t> classes, std::size_t width, std::size_t height,
                  const Palette& palette, std::span<const std::uint8_t> void_mask) {
  if (classes.size() != width * height) throw ShapeError("render_map: class map size does not match extent");
  if (!void_mask.empty() && void_mask.size() != classes.size()) throw ShapeError("render_map: mask size mismatch");
  Image8 img{width, height, 3, std::vector<std::uint8_t>(width * height * 3, 0)};
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (!void_mask.empty() && void_mask[i]) continue;
    if (classes[i] >= palette.size()) continue;
    const Rgb& c = palette[classes[i]];
    std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  return img;
}

std::vector<std::uint8_t> decode_map(const Image8& image, const Palette& palette) {
  if (image.channels != 3) throw DataError("decode_map: expected an RGB image");
  std::vector<std::uint8_t> out(image.width * image.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Rgb px = {image.pixels[i * 3], image.pixels[i * 3 + 1], image.pixels[i * 3 + 2]};
    const auto it = std::find(palette.begin(), palette.end(), px);
    if (it == palette.end()) throw DataError("decode_map: colour not in palette at pixel " + std::to_string(i));
    out[i] = static_cast<std::uint8_t>(it - palette.begin());
  }
  return out;
}

}  // namespace dms
