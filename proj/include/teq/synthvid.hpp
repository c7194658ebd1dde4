#pragma once

// Synthetic videos whose class is carried only by sprite motion, plus the FVC
// ("frame-volume container") file format.
//
// FVC layout, all integers little-endian:
//   offset 0   4 bytes   magic "FVC1"
//   offset 4   u32 x 5   N, T, H, W, C
//   offset 24  u8        dtype, 0x00 = unsigned 8-bit
//   offset 25  N*T*H*W*C pixel bytes, row-major (video, time, row, col, channel)
//   then       u16 x N   class labels
// Total length is exactly 25 + N*T*H*W*C + 2*N bytes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "teq/clipops.hpp"

namespace teq {

enum class Trajectory : std::uint8_t { linear, circular, zigzag, bounce };
enum class SpeedProfile : std::uint8_t { constant, accelerating };

struct MotionClassSpec {
  int class_id = 0;
  Trajectory trajectory = Trajectory::linear;
  SpeedProfile speed_profile = SpeedProfile::constant;
  int heading_degrees = 270;  // drift direction in image coordinates, 270 = downwards
};

/// The available motion classes, indexed by class id.
const std::vector<MotionClassSpec>& motion_classes();

struct GenerateOptions {
  int n_classes = 8;
  int n_per_class = 100;
  int frames = 128;
  int height = 32;
  int width = 32;
  int channels = 3;
};

struct Dataset {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<VideoU8> videos;
  std::vector<int> labels;

  std::size_t size() const { return videos.size(); }
};

/// Renders n_classes * n_per_class videos; video i has label i % n_classes.
/// Output depends only on (seed, options).
Dataset generate_dataset(std::uint64_t seed, const GenerateOptions& options);

/// Renders a single video of the given class.
VideoU8 render_video(std::uint64_t seed, const MotionClassSpec& spec, int frames, int height,
                     int width, int channels);

inline constexpr char kFvcMagic[4] = {'F', 'V', 'C', '1'};
inline constexpr std::size_t kFvcHeaderBytes = 25;

std::size_t fvc_file_size(std::size_t n, std::size_t t, std::size_t h, std::size_t w,
                          std::size_t c);
std::vector<std::uint8_t> encode_fvc(const Dataset& dataset);
Dataset decode_fvc(std::span<const std::uint8_t> bytes);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace teq
