#include "ecgcmr/cmr.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ecgcmr/error.hpp"
#include "ecgcmr/log.hpp"
#include "ecgcmr/random.hpp"

namespace ecgcmr {

std::string to_string(View v) { return v == View::long_axis ? "la" : "sa"; }

View view_from_string(const std::string& s) {
  if (s == "la" || s == "long_axis") return View::long_axis;
  if (s == "sa" || s == "short_axis") return View::short_axis;
  throw ConfigError("unknown view '" + s + "' (expected la or sa)");
}

std::size_t HeartMask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

}  // namespace ecgcmr

namespace ecgcmr::cmr {

CmrClip select_mid_slice(const CmrVolume& volume, View view) {
  if (volume.slices < 1) throw ConfigError("volume has an empty slice axis");
  const int s = volume.slices / 2;
  CmrClip clip(volume.frames, volume.height, volume.width, view);
  for (int t = 0; t < volume.frames; ++t) {
    for (int y = 0; y < volume.height; ++y) {
      for (int x = 0; x < volume.width; ++x) clip.at(t, y, x) = volume.at(y, x, s, t);
    }
  }
  return clip;
}

CropWindow heart_crop_window(const HeartMask& mask, int crop_size) {
  if (crop_size < 1) throw ConfigError("crop size must be positive");
  int rmin = mask.height, rmax = -1, cmin = mask.width, cmax = -1;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) == 0) continue;
      rmin = std::min(rmin, y);
      rmax = std::max(rmax, y);
      cmin = std::min(cmin, x);
      cmax = std::max(cmax, x);
    }
  }
  if (rmax < 0) throw ConfigError("heart mask is empty");
  const int cy = (rmin + rmax) / 2;
  const int cx = (cmin + cmax) / 2;
  return {cy - crop_size / 2, cx - crop_size / 2, crop_size};
}

CmrClip crop_to_heart(const CmrClip& clip, const HeartMask& mask, int crop_size) {
  if (mask.height != clip.height || mask.width != clip.width) {
    throw ConfigError("mask and clip sizes differ");
  }
  const auto w = heart_crop_window(mask, crop_size);
  return crop(clip, w.top, w.left, w.size, w.size);
}

HeartMask crop_mask(const HeartMask& mask, const CropWindow& window) {
  HeartMask out(window.size, window.size, mask.view);
  for (int y = 0; y < window.size; ++y) {
    const int sy = window.top + y;
    if (sy < 0 || sy >= mask.height) continue;
    for (int x = 0; x < window.size; ++x) {
      const int sx = window.left + x;
      if (sx < 0 || sx >= mask.width) continue;
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

std::vector<float> resize_bilinear(const float* src, int in_h, int in_w, int out_h, int out_w) {
  std::vector<float> out(static_cast<std::size_t>(out_h) * out_w);
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), in_h - 1);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), in_w - 1);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * src[y0 * in_w + x0] + wx * src[y0 * in_w + x1];
      const double bot = (1.0 - wx) * src[y1 * in_w + x0] + wx * src[y1 * in_w + x1];
      out[static_cast<std::size_t>(y) * out_w + x] = static_cast<float>((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

CmrClip normalize_resize(const CmrClip& clip, int out_size, std::size_t* clamped) {
  if (out_size < 1) throw ConfigError("out_size must be >= 1");
  std::size_t n_clamped = 0;
  CmrClip in = clip;
  for (float& v : in.pixels) {
    if (!std::isfinite(v)) throw ConfigError("CMR clip contains non-finite pixels");
    if (v < 0.0f || v > 1.0f) {
      v = std::clamp(v, 0.0f, 1.0f);
      ++n_clamped;
    }
  }
  if (n_clamped > 0) log::warn("normalize_resize: clamped ", n_clamped, " pixels into [0, 1]");
  if (clamped != nullptr) *clamped = n_clamped;

  CmrClip out(clip.frames, out_size, out_size, clip.view);
  for (int t = 0; t < clip.frames; ++t) {
    std::vector<float> frame;
    if (clip.height == out_size && clip.width == out_size) {
      auto f = in.frame(t);
      frame.assign(f.begin(), f.end());
    } else {
      frame = resize_bilinear(in.frame(t).data(), clip.height, clip.width, out_size, out_size);
    }
    auto dst = out.frame(t);
    for (std::size_t i = 0; i < frame.size(); ++i) dst[i] = (frame[i] - 0.5f) / 0.5f;
  }
  return out;
}

void AugmentPolicy::validate() const {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0)) throw ConfigError("rotation range must be in [0,180]");
  if (!prob_ok(hflip_prob) || !prob_ok(vflip_prob)) throw ConfigError("flip probabilities must lie in [0,1]");
  if (!(scale_min > 0.0) || scale_max > 1.0 || scale_min > scale_max) {
    throw ConfigError("crop scale range must be within (0,1] with min <= max");
  }
  if (!(aspect_min > 0.0) || aspect_min > aspect_max) throw ConfigError("aspect range must be positive with min <= max");
}

GeometricTransform draw_transform(int height, int width, std::uint64_t seed, const AugmentPolicy& policy) {
  policy.validate();
  Rng rng(seed);
  GeometricTransform tf;
  tf.angle_deg = policy.max_rotation_deg > 0.0 ? rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg) : 0.0;
  tf.hflip = rng.bernoulli(policy.hflip_prob);
  tf.vflip = rng.bernoulli(policy.vflip_prob);

  // Resized-crop parameters follow the usual area/log-aspect rejection scheme.
  const double area = static_cast<double>(height) * width;
  const double log_lo = std::log(policy.aspect_min);
  const double log_hi = std::log(policy.aspect_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * (policy.scale_min == policy.scale_max ? policy.scale_min
                                                                        : rng.uniform(policy.scale_min, policy.scale_max));
    const double aspect = std::exp(log_lo == log_hi ? log_lo : rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (w > 0 && w <= width && h > 0 && h <= height) {
      tf.crop_top = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - h + 1)));
      tf.crop_left = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - w + 1)));
      tf.crop_h = h;
      tf.crop_w = w;
      return tf;
    }
  }
  tf.crop_top = 0;
  tf.crop_left = 0;
  tf.crop_h = height;
  tf.crop_w = width;
  return tf;
}

CmrClip rotate(const CmrClip& clip, double angle_deg) {
  if (angle_deg == 0.0) return clip;
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cy = (clip.height - 1) / 2.0, cx = (clip.width - 1) / 2.0;
  CmrClip out(clip.frames, clip.height, clip.width, clip.view);
  for (int y = 0; y < clip.height; ++y) {
    for (int x = 0; x < clip.width; ++x) {
      // Inverse map output -> source.
      const double dy = y - cy, dx = x - cx;
      const double sx = ca * dx + sa * dy + cx;
      const double sy = -sa * dx + ca * dy + cy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double wx = sx - x0, wy = sy - y0;
      for (int t = 0; t < clip.frames; ++t) {
        auto sample = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= clip.height || xx < 0 || xx >= clip.width) return 0.5;
          return clip.at(t, yy, xx);
        };
        const double v = (1 - wy) * ((1 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1)) +
                         wy * ((1 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1));
        out.at(t, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

CmrClip hflip(const CmrClip& clip) {
  CmrClip out = clip;
  for (int t = 0; t < clip.frames; ++t) {
    for (int y = 0; y < clip.height; ++y) {
      for (int x = 0; x < clip.width; ++x) out.at(t, y, x) = clip.at(t, y, clip.width - 1 - x);
    }
  }
  return out;
}

CmrClip vflip(const CmrClip& clip) {
  CmrClip out = clip;
  for (int t = 0; t < clip.frames; ++t) {
    for (int y = 0; y < clip.height; ++y) {
      for (int x = 0; x < clip.width; ++x) out.at(t, y, x) = clip.at(t, clip.height - 1 - y, x);
    }
  }
  return out;
}

CmrClip crop(const CmrClip& clip, int top, int left, int h, int w) {
  if (h < 1 || w < 1) throw ConfigError("crop size must be positive");
  CmrClip out(clip.frames, h, w, clip.view);
  for (int t = 0; t < clip.frames; ++t) {
    for (int y = 0; y < h; ++y) {
      const int sy = top + y;
      if (sy < 0 || sy >= clip.height) continue;
      for (int x = 0; x < w; ++x) {
        const int sx = left + x;
        if (sx < 0 || sx >= clip.width) continue;
        out.at(t, y, x) = clip.at(t, sy, sx);
      }
    }
  }
  return out;
}

CmrClip apply_transform(const CmrClip& clip, const GeometricTransform& tf, int out_size) {
  CmrClip x = rotate(clip, tf.angle_deg);
  if (tf.hflip) x = hflip(x);
  if (tf.vflip) x = vflip(x);
  if (!(tf.crop_top == 0 && tf.crop_left == 0 && tf.crop_h == x.height && tf.crop_w == x.width)) {
    x = crop(x, tf.crop_top, tf.crop_left, tf.crop_h, tf.crop_w);
  }
  return normalize_resize(x, out_size);
}

CmrClip augment_cmr(const CmrClip& clip, std::uint64_t seed, const AugmentPolicy& policy, int out_size) {
  const auto tf = draw_transform(clip.height, clip.width, seed, policy);
  return apply_transform(clip, tf, out_size);
}

CmrClip prepare_for_model(const CmrClip& clip, Mode mode, std::uint64_t seed, const AugmentPolicy& policy,
                          int out_size) {
  if (mode == Mode::eval) return normalize_resize(clip, out_size);
  return augment_cmr(clip, seed, policy, out_size);
}

}  // namespace ecgcmr::cmr
