#include "teq/synthvid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

namespace teq {

const std::vector<MotionClassSpec>& motion_classes() {
  static const std::vector<MotionClassSpec> classes = [] {
    std::vector<MotionClassSpec> c;
    const std::array<Trajectory, 4> traj{Trajectory::linear, Trajectory::circular,
                                         Trajectory::zigzag, Trajectory::bounce};
    for (Trajectory t : traj)
      for (SpeedProfile p : {SpeedProfile::constant, SpeedProfile::accelerating}) {
        c.push_back({static_cast<int>(c.size()), t, p, 270});
      }
    return c;
  }();
  return classes;
}

namespace {

// Portable uniform draws so rendering is identical across standard libraries.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
  int index(int n) { return static_cast<int>(unit() * n); }

 private:
  Rng rng_;
};

// Motion constants in pixels of a 32-pixel frame and in source frames.
constexpr double kBaseSpeed = 1.0;      // mean progress per frame
constexpr double kAccelPeriod = 32.0;   // sawtooth period of the accelerating profile
constexpr double kCircleRadius = 5.0;
constexpr double kZigzagAmplitude = 5.0;
constexpr double kZigzagLength = 16.0;  // progress per full zigzag cycle
constexpr double kHopLength = 12.0;     // progress per hop
constexpr double kHopHeight = 6.0;

// Distance travelled after t frames.
double progress(SpeedProfile p, double t) {
  if (p == SpeedProfile::constant) return kBaseSpeed * t;
  // speed ramps linearly from 0 to 2 * kBaseSpeed within each period
  const double cycles = t / kAccelPeriod;
  const double whole = std::floor(cycles);
  const double frac = cycles - whole;
  return kBaseSpeed * kAccelPeriod * (whole + frac * frac);
}

// Offset (dx, dy) from the start position after progress u, before scaling.
std::array<double, 2> trajectory_offset(const MotionClassSpec& spec, double u) {
  const double heading = spec.heading_degrees * std::numbers::pi / 180.0;
  // image y axis points down, so a 270 degree heading moves down the frame
  const double hx = std::cos(heading), hy = -std::sin(heading);
  switch (spec.trajectory) {
    case Trajectory::linear:
      return {hx * u, hy * u};
    case Trajectory::circular: {
      const double a = u / kCircleRadius;
      return {hx * 0.5 * u + kCircleRadius * (std::cos(a) - 1.0),
              hy * 0.5 * u - kCircleRadius * std::sin(a)};
    }
    case Trajectory::zigzag: {
      const double phase = u / kZigzagLength - std::floor(u / kZigzagLength);
      const double tri = phase < 0.5 ? 4.0 * phase - 1.0 : 3.0 - 4.0 * phase;
      // lateral axis is the heading rotated by 90 degrees
      return {hx * 0.5 * u - hy * kZigzagAmplitude * tri, hy * 0.5 * u + hx * kZigzagAmplitude * tri};
    }
    case Trajectory::bounce: {
      const double hop = kHopHeight * std::abs(std::sin(std::numbers::pi * u / kHopLength));
      // hops go against the drift
      return {hx * 0.5 * u - hx * hop, hy * 0.5 * u - hy * hop};
    }
  }
  return {0.0, 0.0};
}

double wrapped_delta(double a, double b, double period) {
  double d = a - b;
  d -= period * std::round(d / period);
  return d;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& ch : rgb) ch += v - c;
  return rgb;
}

enum class Shape { square, disc, diamond };

// Anti-aliased coverage of a sprite of half-size r at offset (dx, dy).
double coverage(Shape shape, double r, double dx, double dy) {
  auto ramp = [](double v) { return std::clamp(v + 0.5, 0.0, 1.0); };
  switch (shape) {
    case Shape::square: return ramp(r - std::abs(dx)) * ramp(r - std::abs(dy));
    case Shape::disc: return ramp(r - std::hypot(dx, dy));
    case Shape::diamond: return ramp(r - (std::abs(dx) + std::abs(dy)));
  }
  return 0.0;
}

}  // namespace

VideoU8 render_video(std::uint64_t seed, const MotionClassSpec& spec, int frames, int height,
                     int width, int channels) {
  if (frames < 1) throw Error("video needs at least one frame");
  if (channels != 1 && channels != 3) throw Error("channels must be 1 or 3");
  if (height < 8 || width < 8) throw Error("sprite larger than frame");
  Draw draw(seed);
  const double scale = std::min(height, width) / 32.0;

  // appearance, independent of class
  const auto shape = static_cast<Shape>(draw.index(3));
  const double half = draw.uniform(3.0, 5.0) * scale;
  const auto sprite = hsv_to_rgb(draw.unit(), draw.uniform(0.5, 1.0), draw.uniform(0.8, 1.0));
  std::array<double, 3> bg{};
  for (auto& b : bg) b = draw.uniform(0.15, 0.45);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<Wave, 4> waves{};
  for (auto& w : waves) {
    w = {draw.uniform(-3.0, 3.0), draw.uniform(-3.0, 3.0), draw.uniform(0.0, 2 * std::numbers::pi),
         draw.uniform(0.02, 0.06)};
  }
  const double x0 = draw.uniform(0.0, width), y0 = draw.uniform(0.0, height);
  // random phase within the acceleration cycle so clips do not all start at rest
  const double t0 = draw.uniform(0.0, kAccelPeriod);

  // static background texture
  std::vector<double> background(static_cast<std::size_t>(height) * width * channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double tex = 0.0;
      for (const auto& w : waves) {
        tex += w.amp * std::sin(2 * std::numbers::pi * (w.fx * x / width + w.fy * y / height) +
                                w.phase);
      }
      for (int c = 0; c < channels; ++c) {
        const double base = channels == 3 ? bg[c] : (bg[0] + bg[1] + bg[2]) / 3.0;
        background[(static_cast<std::size_t>(y) * width + x) * channels + c] = base + tex;
      }
    }

  VideoU8 v;
  v.frames = frames;
  v.height = height;
  v.width = width;
  v.channels = channels;
  v.data.resize(static_cast<std::size_t>(frames) * height * width * channels);
  const double sprite_gray = (sprite[0] + sprite[1] + sprite[2]) / 3.0;

  for (int t = 0; t < frames; ++t) {
    const double u = progress(spec.speed_profile, t + t0) - progress(spec.speed_profile, t0);
    const auto off = trajectory_offset(spec, u);
    const double cx = x0 + off[0] * scale, cy = y0 + off[1] * scale;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dx = wrapped_delta(x + 0.5, cx, width);
        const double dy = wrapped_delta(y + 0.5, cy, height);
        const double a = coverage(shape, half, dx, dy);
        const std::size_t px = (static_cast<std::size_t>(y) * width + x) * channels;
        for (int c = 0; c < channels; ++c) {
          const double fg = channels == 3 ? sprite[c] : sprite_gray;
          const double val = std::clamp(background[px + c] * (1.0 - a) + fg * a, 0.0, 1.0);
          v.data[static_cast<std::size_t>(t) * height * width * channels + px + c] =
              static_cast<std::uint8_t>(std::lround(val * 255.0));
        }
      }
  }
  return v;
}

Dataset generate_dataset(std::uint64_t seed, const GenerateOptions& o) {
  const auto& classes = motion_classes();
  if (o.n_classes < 1 || o.n_classes > static_cast<int>(classes.size())) {
    throw Error("n_classes must be between 1 and " + std::to_string(classes.size()));
  }
  if (o.n_per_class < 1) throw Error("n_per_class must be positive");
  Dataset d;
  d.frames = o.frames;
  d.height = o.height;
  d.width = o.width;
  d.channels = o.channels;
  const int n = o.n_classes * o.n_per_class;
  d.videos.reserve(n);
  d.labels.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int label = i % o.n_classes;
    d.videos.push_back(render_video(derive_seed(seed, static_cast<std::uint64_t>(i)),
                                    classes[label], o.frames, o.height, o.width, o.channels));
    d.labels.push_back(label);
  }
  return d;
}

// -------------------------------------------------------------------- FVC

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t fvc_file_size(std::size_t n, std::size_t t, std::size_t h, std::size_t w,
                          std::size_t c) {
  return kFvcHeaderBytes + n * t * h * w * c + 2 * n;
}

std::vector<std::uint8_t> encode_fvc(const Dataset& d) {
  if (d.labels.size() != d.videos.size()) throw Error("one label per video required");
  const std::size_t vol = static_cast<std::size_t>(d.frames) * d.height * d.width * d.channels;
  std::vector<std::uint8_t> out;
  out.reserve(fvc_file_size(d.size(), d.frames, d.height, d.width, d.channels));
  out.insert(out.end(), std::begin(kFvcMagic), std::end(kFvcMagic));
  for (int v : {static_cast<int>(d.size()), d.frames, d.height, d.width, d.channels}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  out.push_back(0x00);
  for (const auto& v : d.videos) {
    if (v.data.size() != vol || v.frames != d.frames || v.height != d.height ||
        v.width != d.width || v.channels != d.channels) {
      throw Error("video shape differs from dataset shape");
    }
    out.insert(out.end(), v.data.begin(), v.data.end());
  }
  for (int label : d.labels) {
    if (label < 0 || label > 0xffff) throw Error("label does not fit in 16 bits");
    out.push_back(static_cast<std::uint8_t>(label & 0xff));
    out.push_back(static_cast<std::uint8_t>(label >> 8));
  }
  return out;
}

Dataset decode_fvc(std::span<const std::uint8_t> b) {
  if (b.size() < kFvcHeaderBytes) throw Error("fvc file truncated");
  if (!std::equal(std::begin(kFvcMagic), std::end(kFvcMagic), b.begin())) {
    throw Error("not an fvc file (bad magic)");
  }
  const std::uint32_t n = get_u32(b, 4), t = get_u32(b, 8), h = get_u32(b, 12),
                      w = get_u32(b, 16), c = get_u32(b, 20);
  if (b[24] != 0x00) throw Error("unsupported fvc dtype");
  if (b.size() != fvc_file_size(n, t, h, w, c)) throw Error("fvc file length mismatch");
  Dataset d;
  d.frames = static_cast<int>(t);
  d.height = static_cast<int>(h);
  d.width = static_cast<int>(w);
  d.channels = static_cast<int>(c);
  const std::size_t vol = static_cast<std::size_t>(t) * h * w * c;
  d.videos.resize(n);
  std::size_t off = kFvcHeaderBytes;
  for (auto& v : d.videos) {
    v.frames = d.frames;
    v.height = d.height;
    v.width = d.width;
    v.channels = d.channels;
    v.data.assign(b.begin() + static_cast<std::ptrdiff_t>(off),
                  b.begin() + static_cast<std::ptrdiff_t>(off + vol));
    off += vol;
  }
  d.labels.resize(n);
  for (auto& label : d.labels) {
    label = b[off] | (b[off + 1] << 8);
    off += 2;
  }
  return d;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_fvc(dataset);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_fvc(bytes);
}

}  // namespace teq
