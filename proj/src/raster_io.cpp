#include "dms/raster_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "binary_io.hpp"
#include "dms/errors.hpp"

namespace dms {

namespace {

constexpr std::uint32_t kMaxExtent = 1U << 20;

void check_extent(const std::filesystem::path& path, std::uint32_t v, const char* what, long long offset) {
  if (v == 0 || v > kMaxExtent) {
    throw DataError(path.string() + ": invalid " + what + " " + std::to_string(v) + " at offset " +
                    std::to_string(offset));
  }
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor<float> read_rsrf(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  detail::Reader r(is, path.string());
  r.magic("RSRF");
  const auto width = r.u32("width");
  check_extent(path, width, "width", 4);
  const auto height = r.u32("height");
  check_extent(path, height, "height", 8);
  const auto bands = r.u32("bands");
  if (bands == 0 || bands > 4096) throw DataError(path.string() + ": invalid band count at offset 12");
  const auto dtype = r.u32("dtype");
  if (dtype != 0) throw DataError(path.string() + ": unsupported dtype code " + std::to_string(dtype) + " at offset 16");
  Tensor<float> t(Shape{1, bands, height, width});
  for (float& v : t.values()) v = r.f32("samples");
  r.expect_end();
  return t;
}

void write_rsrf(const std::filesystem::path& path, const Tensor<float>& bands) {
  const Shape& s = bands.shape();
  if (s.n != 1) throw ShapeError("write_rsrf: expected a single scene, got shape " + s.str());
  auto os = detail::open_out(path);
  os.write("RSRF", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(s.w));
  detail::put_u32(os, static_cast<std::uint32_t>(s.h));
  detail::put_u32(os, static_cast<std::uint32_t>(s.c));
  detail::put_u32(os, 0);
  for (float v : bands.values()) detail::put_f32(os, v);
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

LabelMap read_rslb(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  detail::Reader r(is, path.string());
  r.magic("RSLB");
  LabelMap m;
  const auto width = r.u32("width");
  check_extent(path, width, "width", 4);
  const auto height = r.u32("height");
  check_extent(path, height, "height", 8);
  m.width = width;
  m.height = height;
  m.values.resize(m.width * m.height);
  r.read(m.values.data(), m.values.size(), "labels");
  r.expect_end();
  return m;
}

void write_rslb(const std::filesystem::path& path, const LabelMap& labels) {
  if (labels.values.size() != labels.width * labels.height) throw ShapeError("write_rslb: size mismatch");
  auto os = detail::open_out(path);
  os.write("RSLB", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(labels.width));
  detail::put_u32(os, static_cast<std::uint32_t>(labels.height));
  os.write(reinterpret_cast<const char*>(labels.values.data()), static_cast<std::streamsize>(labels.values.size()));
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

Image8 read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open '" + path.string() + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError(path.string() + ": not a PNG file (bad signature at offset 0)");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  Image8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": corrupt PNG data");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto bit_depth = png_get_bit_depth(png, info);
  const auto color = png_get_color_type(png, info);
  if (bit_depth != 8 || color == PNG_COLOR_TYPE_PALETTE) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": only 8-bit grayscale/RGB/RGBA PNG is supported");
  }
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.pixels.resize(img.width * img.height * img.channels);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  int color = 0;
  switch (image.channels) {
    case 1:
      color = PNG_COLOR_TYPE_GRAY;
      break;
    case 2:
      color = PNG_COLOR_TYPE_GRAY_ALPHA;
      break;
    case 3:
      color = PNG_COLOR_TYPE_RGB;
      break;
    case 4:
      color = PNG_COLOR_TYPE_RGBA;
      break;
    default:
      throw ShapeError("write_png: unsupported channel count " + std::to_string(image.channels));
  }
  if (image.width == 0 || image.height == 0) throw ShapeError("write_png: empty image");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot write '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(image.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace dms
