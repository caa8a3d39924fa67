#pragma once

#include <cstdint>
#include <vector>

#include "ecgcmr/types.hpp"

namespace ecgcmr::cmr {

/// Middle slice (index floor(S/2)) of an [H, W, S, T] acquisition.
CmrClip select_mid_slice(const CmrVolume& volume, View view = View::short_axis);

struct CropWindow {
  int top = 0;
  int left = 0;
  int size = 0;
};

/// Window of `crop_size` centered on the center of the mask's bounding box.
CropWindow heart_crop_window(const HeartMask& mask, int crop_size);

/// Crop every frame with the same window; pixels outside the image are zero.
CmrClip crop_to_heart(const CmrClip& clip, const HeartMask& mask, int crop_size);
HeartMask crop_mask(const HeartMask& mask, const CropWindow& window);

/// Bilinear resize of one frame (half-pixel centers, edge clamped).
std::vector<float> resize_bilinear(const float* src, int in_h, int in_w, int out_h, int out_w);

/// Bilinear resize to out_size x out_size, then (v - 0.5) / 0.5. Inputs
/// outside [0, 1] are clamped first and reported with a warning; the count of
/// clamped pixels is returned through `clamped` when given.
CmrClip normalize_resize(const CmrClip& clip, int out_size, std::size_t* clamped = nullptr);

struct AugmentPolicy {
  double max_rotation_deg = 30.0;
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  double scale_min = 0.8;
  double scale_max = 1.0;
  double aspect_min = 0.9;
  double aspect_max = 1.1;

  void validate() const;
};

/// One geometric transform shared by all frames of a clip.
struct GeometricTransform {
  double angle_deg = 0.0;
  bool hflip = false;
  bool vflip = false;
  int crop_top = 0;
  int crop_left = 0;
  int crop_h = 0;
  int crop_w = 0;
};

GeometricTransform draw_transform(int height, int width, std::uint64_t seed, const AugmentPolicy& policy);

/// Rotation about the image center with bilinear sampling. Uncovered pixels
/// take 0.5, which is zero after normalization.
CmrClip rotate(const CmrClip& clip, double angle_deg);
CmrClip hflip(const CmrClip& clip);
CmrClip vflip(const CmrClip& clip);
CmrClip crop(const CmrClip& clip, int top, int left, int h, int w);

/// Rotation, flips, resized crop, then normalize_resize.
CmrClip apply_transform(const CmrClip& clip, const GeometricTransform& tf, int out_size);
CmrClip augment_cmr(const CmrClip& clip, std::uint64_t seed, const AugmentPolicy& policy, int out_size);

enum class Mode { train, eval };

/// Training path augments; validation/test path is normalize_resize only.
CmrClip prepare_for_model(const CmrClip& clip, Mode mode, std::uint64_t seed, const AugmentPolicy& policy,
                          int out_size);

}  // namespace ecgcmr::cmr
