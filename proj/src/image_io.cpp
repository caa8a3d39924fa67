#include "ecgcmr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "ecgcmr/error.hpp"
#include "ecgcmr/hash.hpp"

namespace ecgcmr {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

std::uint8_t to_byte(float v, float lo, float hi) {
  const float u = hi > lo ? (v - lo) / (hi - lo) : 0.0f;
  return static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

std::vector<std::uint8_t> encode_png_gray(int width, int height, std::span<const std::uint8_t> pixels) {
  if (width < 1 || height < 1 || pixels.size() != static_cast<std::size_t>(width) * height) {
    throw ConfigError("PNG pixel buffer does not match its dimensions");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw Error("cannot initialise the PNG encoder");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png_gray(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> pixels) {
  atomic_write(path, encode_png_gray(width, height, pixels));
}

void write_clip_png(const std::filesystem::path& path, const CmrClip& clip, float lo, float hi) {
  const int w = clip.width * clip.frames;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * clip.height);
  for (int t = 0; t < clip.frames; ++t) {
    for (int y = 0; y < clip.height; ++y) {
      for (int x = 0; x < clip.width; ++x) {
        px[static_cast<std::size_t>(y) * w + t * clip.width + x] = to_byte(clip.at(t, y, x), lo, hi);
      }
    }
  }
  write_png_gray(path, w, clip.height, px);
}

void write_heatmap_png(const std::filesystem::path& path, std::span<const float> map, int rows, int cols,
                       int row_height) {
  if (map.size() != static_cast<std::size_t>(rows) * cols) throw ConfigError("heatmap size mismatch");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(rows) * row_height * cols);
  for (int r = 0; r < rows; ++r) {
    for (int k = 0; k < row_height; ++k) {
      for (int c = 0; c < cols; ++c) {
        px[(static_cast<std::size_t>(r) * row_height + k) * cols + c] =
            to_byte(map[static_cast<std::size_t>(r) * cols + c], 0.0f, 1.0f);
      }
    }
  }
  write_png_gray(path, cols, rows * row_height, px);
}

}  // namespace ecgcmr
