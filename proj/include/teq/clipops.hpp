#pragma once

// Temporal transformation algebra and spatial augmentations for video clips.
//
// A temporal transform is the canonical triple (speed exponent, direction,
// start frame). Speed subsampling is applied first; reversal then traverses the
// same strided index set backwards. All extents and offsets are measured in
// source frames.

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "teq/common.hpp"

namespace teq {

/// Dense float video, layout (time, row, col, channel), values in [0, 1].
struct VideoTensor {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  VideoTensor() = default;
  VideoTensor(int t, int h, int w, int c);

  float& at(int t, int y, int x, int c) {
    return data[((static_cast<std::size_t>(t) * height + y) * width + x) * channels + c];
  }
  float at(int t, int y, int x, int c) const {
    return data[((static_cast<std::size_t>(t) * height + y) * width + x) * channels + c];
  }
  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * channels; }

  /// Throws if shape or value invariants are violated.
  void validate() const;
};

/// 8-bit video as stored on disk, same layout as VideoTensor.
struct VideoU8 {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * channels; }
  VideoTensor to_float() const;
};

enum class Direction : std::uint8_t { forward = 0, reverse = 1 };

struct TemporalTransform {
  int speed_exponent = 0;  // playback factor 2^k, k in [0, 3]
  Direction direction = Direction::forward;
  int start_frame = 0;

  int factor() const { return 1 << speed_exponent; }
  int extent(int clip_len) const { return clip_len * factor(); }

  auto operator<=>(const TemporalTransform&) const = default;
};

constexpr int kNumSpeedClasses = 4;

/// Relative transformation between the two clips of one video.
struct RelativeTransform {
  std::array<int, 2> speed_pair{};
  std::array<Direction, 2> direction_pair{};
  int delta_start = 0;  // start_q - start_p, in source frames

  auto operator<=>(const RelativeTransform&) const = default;
};

struct SpatialAugmentation {
  int top = 0;
  int left = 0;
  int crop_height = 0;
  int crop_width = 0;
  bool horizontal_flip = false;
  double brightness_shift = 0.0;  // [-0.2, 0.2]
  double contrast_scale = 1.0;    // [0.8, 1.25]

  auto operator<=>(const SpatialAugmentation&) const = default;
};

enum class OverlapOrder : std::uint8_t { p_before_q = 0, overlapping = 1, p_after_q = 2 };
constexpr int kNumOverlapClasses = 3;

/// Which temporal transformations the sampler may draw.
struct TemporalSamplingConfig {
  std::vector<int> speed_exponents{0, 1, 2, 3};
  bool allow_reverse = true;
};

struct SpatialSamplingConfig {
  double min_crop_scale = 0.7;  // crop side as a fraction of min(H, W)
  double max_crop_scale = 1.0;
  bool allow_flip = true;
  double max_brightness = 0.2;
  double max_contrast = 1.25;  // contrast drawn log-uniformly in [1/max, max]
  bool allow_color = true;
};

std::vector<int> frame_indices(const TemporalTransform& tau, int clip_len);

VideoTensor apply_temporal(const VideoTensor& video, const TemporalTransform& tau, int clip_len);
VideoTensor apply_temporal(const VideoU8& video, const TemporalTransform& tau, int clip_len);

/// Speeds from `config` whose extent fits into `video_len`.
std::vector<int> feasible_speeds(const TemporalSamplingConfig& config, int video_len, int clip_len);

TemporalTransform sample_temporal_transform(Rng& rng, int video_len, int clip_len,
                                            const TemporalSamplingConfig& config);

RelativeTransform relative_descriptor(const TemporalTransform& p, const TemporalTransform& q);

OverlapOrder overlap_order_label(const TemporalTransform& p, const TemporalTransform& q,
                                 int clip_len);

SpatialAugmentation identity_augmentation(int height, int width);

SpatialAugmentation sample_spatial_augmentation(Rng& rng, int height, int width,
                                                const SpatialSamplingConfig& config);

/// Crops, resizes to out_size x out_size (bilinear), flips and colour-jitters
/// every frame with the same parameters; clamps to [0, 1].
VideoTensor apply_spatial(const VideoTensor& video, const SpatialAugmentation& sigma, int out_size);

std::string to_string(Direction d);
std::string to_string(OverlapOrder o);

}  // namespace teq
