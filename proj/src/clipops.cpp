#include "teq/clipops.hpp"

#include <algorithm>
#include <cmath>

namespace teq {

VideoTensor::VideoTensor(int t, int h, int w, int c)
    : frames(t), height(h), width(w), channels(c),
      data(static_cast<std::size_t>(t) * h * w * c, 0.0f) {}

void VideoTensor::validate() const {
  if (frames < 1 || height < 8 || width < 8 || (channels != 1 && channels != 3)) {
    throw Error("invalid video shape");
  }
  if (data.size() != static_cast<std::size_t>(frames) * frame_size()) {
    throw Error("video buffer does not match its shape");
  }
  for (float v : data) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw Error("video values must lie in [0, 1]");
  }
}

VideoTensor VideoU8::to_float() const {
  VideoTensor out(frames, height, width, channels);
  for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = data[i] / 255.0f;
  return out;
}

std::vector<int> frame_indices(const TemporalTransform& tau, int clip_len) {
  std::vector<int> idx(static_cast<std::size_t>(clip_len));
  const int s = tau.factor();
  for (int t = 0; t < clip_len; ++t) idx[t] = tau.start_frame + t * s;
  if (tau.direction == Direction::reverse) std::reverse(idx.begin(), idx.end());
  return idx;
}

namespace {

void check_fits(int video_len, const TemporalTransform& tau, int clip_len) {
  if (clip_len < 1) throw Error("clip length must be positive");
  if (tau.start_frame < 0 || tau.start_frame + tau.extent(clip_len) > video_len) {
    throw Error("transform exceeds video length");
  }
}

}  // namespace

VideoTensor apply_temporal(const VideoTensor& video, const TemporalTransform& tau, int clip_len) {
  check_fits(video.frames, tau, clip_len);
  VideoTensor out(clip_len, video.height, video.width, video.channels);
  const std::size_t fs = video.frame_size();
  const auto idx = frame_indices(tau, clip_len);
  for (int t = 0; t < clip_len; ++t) {
    std::copy_n(video.data.begin() + static_cast<std::ptrdiff_t>(idx[t] * fs), fs,
                out.data.begin() + static_cast<std::ptrdiff_t>(t * fs));
  }
  return out;
}

VideoTensor apply_temporal(const VideoU8& video, const TemporalTransform& tau, int clip_len) {
  check_fits(video.frames, tau, clip_len);
  VideoTensor out(clip_len, video.height, video.width, video.channels);
  const std::size_t fs = video.frame_size();
  const auto idx = frame_indices(tau, clip_len);
  for (int t = 0; t < clip_len; ++t) {
    const std::uint8_t* src = video.data.data() + static_cast<std::size_t>(idx[t]) * fs;
    float* dst = out.data.data() + static_cast<std::size_t>(t) * fs;
    for (std::size_t i = 0; i < fs; ++i) dst[i] = src[i] / 255.0f;
  }
  return out;
}

std::vector<int> feasible_speeds(const TemporalSamplingConfig& config, int video_len,
                                 int clip_len) {
  std::vector<int> out;
  for (int k : config.speed_exponents) {
    if (k < 0 || k >= kNumSpeedClasses) throw Error("speed exponent out of range");
    if (clip_len * (1 << k) <= video_len) out.push_back(k);
  }
  return out;
}

TemporalTransform sample_temporal_transform(Rng& rng, int video_len, int clip_len,
                                            const TemporalSamplingConfig& config) {
  if (clip_len < 1 || video_len < clip_len) throw Error("video too short");
  const auto speeds = feasible_speeds(config, video_len, clip_len);
  if (speeds.empty()) throw Error("video too short");
  TemporalTransform tau;
  tau.speed_exponent =
      speeds[std::uniform_int_distribution<std::size_t>(0, speeds.size() - 1)(rng)];
  if (config.allow_reverse) {
    tau.direction = std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? Direction::forward
                                                                       : Direction::reverse;
  }
  tau.start_frame =
      std::uniform_int_distribution<int>(0, video_len - tau.extent(clip_len))(rng);
  return tau;
}

RelativeTransform relative_descriptor(const TemporalTransform& p, const TemporalTransform& q) {
  RelativeTransform r;
  r.speed_pair = {p.speed_exponent, q.speed_exponent};
  r.direction_pair = {p.direction, q.direction};
  r.delta_start = q.start_frame - p.start_frame;
  return r;
}

OverlapOrder overlap_order_label(const TemporalTransform& p, const TemporalTransform& q,
                                 int clip_len) {
  const int p_end = p.start_frame + p.extent(clip_len);
  const int q_end = q.start_frame + q.extent(clip_len);
  if (p_end <= q.start_frame) return OverlapOrder::p_before_q;
  if (q_end <= p.start_frame) return OverlapOrder::p_after_q;
  return OverlapOrder::overlapping;
}

SpatialAugmentation identity_augmentation(int height, int width) {
  SpatialAugmentation s;
  s.crop_height = height;
  s.crop_width = width;
  return s;
}

SpatialAugmentation sample_spatial_augmentation(Rng& rng, int height, int width,
                                                const SpatialSamplingConfig& config) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SpatialAugmentation s;
  const double scale =
      config.min_crop_scale + (config.max_crop_scale - config.min_crop_scale) * unit(rng);
  const int side = std::clamp(static_cast<int>(std::lround(scale * std::min(height, width))), 1,
                              std::min(height, width));
  s.crop_height = side;
  s.crop_width = side;
  s.top = std::uniform_int_distribution<int>(0, height - side)(rng);
  s.left = std::uniform_int_distribution<int>(0, width - side)(rng);
  s.horizontal_flip = config.allow_flip && unit(rng) < 0.5;
  if (config.allow_color) {
    s.brightness_shift = config.max_brightness * (2.0 * unit(rng) - 1.0);
    const double log_c = std::log(config.max_contrast);
    s.contrast_scale = std::exp(log_c * (2.0 * unit(rng) - 1.0));
  }
  return s;
}

VideoTensor apply_spatial(const VideoTensor& video, const SpatialAugmentation& sigma,
                          int out_size) {
  if (sigma.crop_height < 1 || sigma.crop_width < 1 || sigma.top < 0 || sigma.left < 0 ||
      sigma.top + sigma.crop_height > video.height ||
      sigma.left + sigma.crop_width > video.width) {
    throw Error("invalid crop box");
  }
  if (out_size < 1) throw Error("invalid output resolution");

  const int C = video.channels;
  VideoTensor out(video.frames, out_size, out_size, C);

  // Bilinear sampling with half-pixel centres; the weights are shared by all frames.
  struct Tap {
    int i0, i1;
    float w1;
  };
  auto taps = [](int crop, int origin, int n_out, int limit) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    const double scale = static_cast<double>(crop) / n_out;
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(crop - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, crop - 1);
      t[o] = {std::min(origin + i0, limit - 1), std::min(origin + i1, limit - 1),
              static_cast<float>(src - i0)};
    }
    return t;
  };
  const auto ty = taps(sigma.crop_height, sigma.top, out_size, video.height);
  const auto tx = taps(sigma.crop_width, sigma.left, out_size, video.width);

  const float contrast = static_cast<float>(sigma.contrast_scale);
  const float shift = static_cast<float>(sigma.brightness_shift);
  const bool jitter = contrast != 1.0f || shift != 0.0f;

  for (int t = 0; t < video.frames; ++t) {
    for (int y = 0; y < out_size; ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < out_size; ++x) {
        const Tap& b = tx[sigma.horizontal_flip ? out_size - 1 - x : x];
        for (int c = 0; c < C; ++c) {
          const float top = video.at(t, a.i0, b.i0, c) * (1 - b.w1) + video.at(t, a.i0, b.i1, c) * b.w1;
          const float bot = video.at(t, a.i1, b.i0, c) * (1 - b.w1) + video.at(t, a.i1, b.i1, c) * b.w1;
          float v = top * (1 - a.w1) + bot * a.w1;
          if (jitter) v = (v - 0.5f) * contrast + 0.5f + shift;
          out.at(t, y, x, c) = std::clamp(v, 0.0f, 1.0f);
        }
      }
    }
  }
  return out;
}

std::string to_string(Direction d) { return d == Direction::forward ? "forward" : "reverse"; }

std::string to_string(OverlapOrder o) {
  switch (o) {
    case OverlapOrder::p_before_q: return "p_before_q";
    case OverlapOrder::overlapping: return "overlapping";
    case OverlapOrder::p_after_q: return "p_after_q";
  }
  return "unknown";
}

}  // namespace teq
