#include "dms/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dms/errors.hpp"

namespace dms {

std::size_t RasterScene::void_count() const {
  return static_cast<std::size_t>(std::count(void_mask.begin(), void_mask.end(), std::uint8_t{1}));
}

LabelMap RasterScene::label_map() const {
  LabelMap m{width(), height(), labels};
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    if (void_mask[i]) m.values[i] = kVoidLabel;
  }
  return m;
}

RasterScene make_scene(std::string id, Tensor<float> bands, const LabelMap& labels) {
  const Shape& s = bands.shape();
  if (s.n != 1) throw ShapeError("scene bands must have batch extent 1, got " + s.str());
  if (labels.width != s.w || labels.height != s.h) {
    throw DataError("scene '" + id + "': label extent " + std::to_string(labels.width) + "x" +
                    std::to_string(labels.height) + " differs from image extent " + std::to_string(s.w) + "x" +
                    std::to_string(s.h));
  }
  RasterScene scene;
  scene.id = std::move(id);
  scene.bands = std::move(bands);
  scene.labels.resize(labels.values.size());
  scene.void_mask.resize(labels.values.size());
  for (std::size_t i = 0; i < labels.values.size(); ++i) {
    const bool is_void = labels.values[i] == kVoidLabel;
    scene.void_mask[i] = is_void ? 1 : 0;
    scene.labels[i] = is_void ? 0 : labels.values[i];
  }
  return scene;
}

namespace {

bool has_extension(const std::filesystem::path& p, const char* ext) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e == ext;
}

Tensor<float> load_bands(const std::filesystem::path& path) {
  if (has_extension(path, ".rsrf")) return read_rsrf(path);
  if (has_extension(path, ".png")) {
    const Image8 img = read_png(path);
    // alpha is dropped: gray+alpha -> 1 band, RGBA -> 3 bands
    const std::size_t bands = img.channels == 2 ? 1 : (img.channels == 4 ? 3 : img.channels);
    Tensor<float> t(Shape{1, bands, img.height, img.width});
    for (std::size_t b = 0; b < bands; ++b) {
      float* dst = t.plane(0, b);
      for (std::size_t i = 0; i < img.width * img.height; ++i) {
        dst[i] = static_cast<float>(img.pixels[i * img.channels + b]) / 255.0F;
      }
    }
    return t;
  }
  throw DataError("unsupported image format '" + path.string() + "' (expected .rsrf or .png)");
}

LabelMap load_labels(const std::filesystem::path& path) {
  if (has_extension(path, ".rslb")) return read_rslb(path);
  if (has_extension(path, ".png")) {
    const Image8 img = read_png(path);
    if (img.channels != 1) throw DataError(path.string() + ": label PNG must be 8-bit grayscale");
    return LabelMap{img.width, img.height, img.pixels};
  }
  throw DataError("unsupported label format '" + path.string() + "' (expected .rslb or .png)");
}

}  // namespace

RasterScene load_scene(const std::filesystem::path& image_path,
                       const std::optional<std::filesystem::path>& label_path) {
  Tensor<float> bands = load_bands(image_path);
  LabelMap labels;
  if (label_path) {
    labels = load_labels(*label_path);
  } else {
    labels = LabelMap{bands.shape().w, bands.shape().h,
                      std::vector<std::uint8_t>(bands.shape().plane(), kVoidLabel)};
  }
  return make_scene(image_path.stem().string(), std::move(bands), labels);
}

void save_scene(const RasterScene& scene, const std::filesystem::path& image_path,
                const std::filesystem::path& label_path) {
  write_rsrf(image_path, scene.bands);
  write_rslb(label_path, scene.label_map());
}

Normalizer fit_normalizer(std::span<const RasterScene> scenes) {
  if (scenes.empty()) throw DataError("cannot fit a normalizer without scenes");
  const std::size_t bands = scenes.front().band_count();
  Normalizer n;
  n.mean.assign(bands, 0.0);
  n.stddev.assign(bands, 0.0);
  std::vector<double> sum(bands, 0.0);
  std::size_t count = 0;
  for (const auto& s : scenes) {
    if (s.band_count() != bands) throw DataError("scene '" + s.id + "' has a different band count");
    for (std::size_t b = 0; b < bands; ++b) {
      const float* src = s.bands.plane(0, b);
      for (std::size_t i = 0; i < s.bands.shape().plane(); ++i) {
        if (!s.void_mask[i]) sum[b] += src[i];
      }
    }
    count += s.bands.shape().plane() - s.void_count();
  }
  if (count == 0) throw DataError("cannot fit a normalizer: every training pixel is void");
  for (std::size_t b = 0; b < bands; ++b) n.mean[b] = sum[b] / static_cast<double>(count);
  std::vector<double> sq(bands, 0.0);
  for (const auto& s : scenes) {
    for (std::size_t b = 0; b < bands; ++b) {
      const float* src = s.bands.plane(0, b);
      for (std::size_t i = 0; i < s.bands.shape().plane(); ++i) {
        if (s.void_mask[i]) continue;
        const double d = src[i] - n.mean[b];
        sq[b] += d * d;
      }
    }
  }
  for (std::size_t b = 0; b < bands; ++b) {
    n.stddev[b] = std::max(std::sqrt(sq[b] / static_cast<double>(count)), Normalizer::kStdFloor);
  }
  return n;
}

void Normalizer::apply(RasterScene& scene) const {
  if (scene.band_count() != mean.size()) {
    throw DataError("normalizer has " + std::to_string(mean.size()) + " bands, scene '" + scene.id + "' has " +
                    std::to_string(scene.band_count()));
  }
  for (std::size_t b = 0; b < mean.size(); ++b) {
    float* p = scene.bands.plane(0, b);
    for (std::size_t i = 0; i < scene.bands.shape().plane(); ++i) {
      p[i] = static_cast<float>((p[i] - mean[b]) / stddev[b]);
    }
  }
}

std::string Normalizer::to_text() const {
  std::string out;
  char buf[96];
  for (std::size_t b = 0; b < mean.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", mean[b], stddev[b]);
    out += buf;
  }
  return out;
}

Normalizer Normalizer::from_text(const std::string& text) {
  Normalizer n;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double m = 0;
    double s = 0;
    if (!(ls >> m >> s) || !(s > 0)) throw DataError("malformed normalizer line '" + line + "'");
    n.mean.push_back(m);
    n.stddev.push_back(s);
  }
  if (n.mean.empty()) throw DataError("empty normalizer");
  return n;
}

void Normalizer::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write '" + path.string() + "'");
  os << to_text();
}

Normalizer Normalizer::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open normalizer '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n <= 1) return 0;
  const auto period = 2 * (static_cast<std::ptrdiff_t>(n) - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

namespace {

// Padded extent and leading pad for one axis of length n at patch size λ.
struct AxisFit {
  std::size_t extent;
  std::size_t lead;
};

AxisFit fit_axis(std::size_t n, int size) {
  const auto s = static_cast<std::size_t>(size);
  if (n >= s) return {n, 0};
  const std::size_t pad = s - n;
  return {s, pad / 2};
}

bool axis_accepts(std::size_t n, int size) {
  const auto s = static_cast<std::size_t>(size);
  if (n >= s) return true;
  const std::size_t pad = s - n;
  return pad - pad / 2 <= n - 1;
}

}  // namespace

bool scene_accepts_size(const RasterScene& scene, int size) {
  return size >= 1 && axis_accepts(scene.height(), size) && axis_accepts(scene.width(), size);
}

void copy_window(const RasterScene& scene, int size, std::size_t top, std::size_t left, PatchBatch& batch,
                 std::size_t slot) {
  const AxisFit fy = fit_axis(scene.height(), size);
  const AxisFit fx = fit_axis(scene.width(), size);
  const auto lam = static_cast<std::size_t>(size);
  const std::size_t H = scene.height();
  const std::size_t W = scene.width();
  const bool padded = fy.lead > 0 || fx.lead > 0 || fy.extent > H || fx.extent > W;
  for (std::size_t b = 0; b < scene.band_count(); ++b) {
    const float* src = scene.bands.plane(0, b);
    float* dst = batch.inputs.plane(slot, b);
    for (std::size_t y = 0; y < lam; ++y) {
      const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(top + y) - static_cast<std::ptrdiff_t>(fy.lead), H);
      if (!padded) {
        std::copy(src + sy * W + left, src + sy * W + left + lam, dst + y * lam);
        continue;
      }
      for (std::size_t x = 0; x < lam; ++x) {
        const std::size_t sx =
            reflect_index(static_cast<std::ptrdiff_t>(left + x) - static_cast<std::ptrdiff_t>(fx.lead), W);
        dst[y * lam + x] = src[sy * W + sx];
      }
    }
  }
  std::uint8_t* lab = batch.labels.data() + slot * lam * lam;
  std::uint8_t* msk = batch.void_mask.data() + slot * lam * lam;
  for (std::size_t y = 0; y < lam; ++y) {
    const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(top + y) - static_cast<std::ptrdiff_t>(fy.lead), H);
    for (std::size_t x = 0; x < lam; ++x) {
      const std::size_t sx =
          reflect_index(static_cast<std::ptrdiff_t>(left + x) - static_cast<std::ptrdiff_t>(fx.lead), W);
      lab[y * lam + x] = scene.labels[sy * W + sx];
      msk[y * lam + x] = scene.void_mask[sy * W + sx];
    }
  }
}

PatchBatch extract_batch(std::span<const RasterScene> scenes, int size, int batch_size, Rng& rng,
                         bool class_balance) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (size < 1) throw std::invalid_argument("patch size must be >= 1");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scene_accepts_size(scenes[i], size)) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw DataError("patch size " + std::to_string(size) + " exceeds every scene even after reflection padding");
  }
  const std::size_t bands = scenes[eligible.front()].band_count();
  for (std::size_t i : eligible) {
    if (scenes[i].band_count() != bands) throw DataError("scenes disagree on band count");
  }
  const auto lam = static_cast<std::size_t>(size);
  const auto n = static_cast<std::size_t>(batch_size);
  PatchBatch batch;
  batch.size = size;
  batch.inputs = Tensor<float>(Shape{n, bands, lam, lam});
  batch.labels.resize(n * lam * lam);
  batch.void_mask.resize(n * lam * lam);
  for (std::size_t k = 0; k < n; ++k) {
    const RasterScene& scene = scenes[eligible[rng.uniform_int(eligible.size())]];
    const AxisFit fy = fit_axis(scene.height(), size);
    const AxisFit fx = fit_axis(scene.width(), size);
    const std::size_t rows = fy.extent - lam + 1;
    const std::size_t cols = fx.extent - lam + 1;
    std::size_t top = rng.uniform_int(rows);
    std::size_t left = rng.uniform_int(cols);
    if (class_balance) {
      std::vector<int> present;
      for (std::size_t i = 0; i < scene.labels.size(); ++i) {
        if (scene.void_mask[i]) continue;
        if (std::find(present.begin(), present.end(), scene.labels[i]) == present.end()) {
          present.push_back(scene.labels[i]);
        }
      }
      if (!present.empty()) {
        std::sort(present.begin(), present.end());
        const int target = present[rng.uniform_int(present.size())];
        for (int attempt = 0; attempt < 256; ++attempt) {
          const std::size_t cy = reflect_index(static_cast<std::ptrdiff_t>(top + lam / 2) -
                                                   static_cast<std::ptrdiff_t>(fy.lead), scene.height());
          const std::size_t cx = reflect_index(static_cast<std::ptrdiff_t>(left + lam / 2) -
                                                   static_cast<std::ptrdiff_t>(fx.lead), scene.width());
          const std::size_t c = cy * scene.width() + cx;
          if (!scene.void_mask[c] && scene.labels[c] == target) break;
          top = rng.uniform_int(rows);
          left = rng.uniform_int(cols);
        }
      }
    }
    copy_window(scene, size, top, left, batch, k);
  }
  return batch;
}

}  // namespace dms
