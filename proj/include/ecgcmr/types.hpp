#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ecgcmr {

inline constexpr int kLeads = 12;

/// 12-lead recording, lead-major (lead l occupies samples[l*length, (l+1)*length)).
struct EcgRecord {
  std::size_t length = 0;
  double sample_rate = 500.0;
  std::vector<double> samples;

  EcgRecord() = default;
  EcgRecord(std::size_t len, double rate) : length(len), sample_rate(rate), samples(kLeads * len, 0.0) {}

  std::span<double> lead(int l) { return {samples.data() + static_cast<std::size_t>(l) * length, length}; }
  std::span<const double> lead(int l) const {
    return {samples.data() + static_cast<std::size_t>(l) * length, length};
  }
  double& at(int l, std::size_t i) { return samples[static_cast<std::size_t>(l) * length + i]; }
  double at(int l, std::size_t i) const { return samples[static_cast<std::size_t>(l) * length + i]; }

  /// Throws ConfigError unless the record has 12 leads of finite samples.
  void validate() const;
};

enum class View { long_axis, short_axis };

std::string to_string(View v);
View view_from_string(const std::string& s);

/// T x H x W grayscale clip, frame-major.
struct CmrClip {
  int frames = 0;
  int height = 0;
  int width = 0;
  View view = View::short_axis;
  std::vector<float> pixels;

  CmrClip() = default;
  CmrClip(int t, int h, int w, View v)
      : frames(t), height(h), width(w), view(v), pixels(static_cast<std::size_t>(t) * h * w, 0.0f) {}

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  float& at(int t, int y, int x) { return pixels[t * frame_size() + static_cast<std::size_t>(y) * width + x]; }
  float at(int t, int y, int x) const {
    return pixels[t * frame_size() + static_cast<std::size_t>(y) * width + x];
  }
  std::span<float> frame(int t) { return {pixels.data() + t * frame_size(), frame_size()}; }
  std::span<const float> frame(int t) const { return {pixels.data() + t * frame_size(), frame_size()}; }
};

struct HeartMask {
  int height = 0;
  int width = 0;
  View view = View::short_axis;
  std::vector<std::uint8_t> data;

  HeartMask() = default;
  HeartMask(int h, int w, View v) : height(h), width(w), view(v), data(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
};

/// Raw short-axis acquisition laid out as [H, W, S, T].
struct CmrVolume {
  int height = 0;
  int width = 0;
  int slices = 0;
  int frames = 0;
  std::vector<float> data;

  CmrVolume() = default;
  CmrVolume(int h, int w, int s, int t)
      : height(h), width(w), slices(s), frames(t), data(static_cast<std::size_t>(h) * w * s * t, 0.0f) {}

  std::size_t index(int y, int x, int s, int t) const {
    return ((static_cast<std::size_t>(y) * width + x) * slices + s) * frames + t;
  }
  float& at(int y, int x, int s, int t) { return data[index(y, x, s, t)]; }
  float at(int y, int x, int s, int t) const { return data[index(y, x, s, t)]; }
};

}  // namespace ecgcmr
