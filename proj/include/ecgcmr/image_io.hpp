#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ecgcmr/types.hpp"

namespace ecgcmr {

/// 8-bit grayscale PNG, row-major.
std::vector<std::uint8_t> encode_png_gray(int width, int height, std::span<const std::uint8_t> pixels);
void write_png_gray(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> pixels);

/// Frames side by side; values are mapped from [lo, hi] to [0, 255].
void write_clip_png(const std::filesystem::path& path, const CmrClip& clip, float lo, float hi);

/// A rows x cols map in [0, 1], each row repeated `row_height` times.
void write_heatmap_png(const std::filesystem::path& path, std::span<const float> map, int rows, int cols,
                       int row_height = 8);

}  // namespace ecgcmr
