#include "doctest.h"

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "teq/clipops.hpp"

using namespace teq;

namespace {

VideoTensor ramp_video(int t, int h, int w, int c) {
  VideoTensor v(t, h, w, c);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>((i * 37) % 101) / 100.0f;
  return v;
}

VideoTensor frame_tagged(int t) {
  VideoTensor v(t, 8, 8, 1);
  for (int f = 0; f < t; ++f)
    for (std::size_t i = 0; i < v.frame_size(); ++i) v.data[f * v.frame_size() + i] = f / 255.0f;
  return v;
}

TemporalTransform tt(int k, Direction d, int start) {
  TemporalTransform t;
  t.speed_exponent = k;
  t.direction = d;
  t.start_frame = start;
  return t;
}

// Upper-tail chi-square probability via the Wilson-Hilferty cube-root normal approximation.
double chi_square_p(double stat, int dof) {
  const double k = dof;
  const double z = (std::cbrt(stat / k) - (1.0 - 2.0 / (9.0 * k))) / std::sqrt(2.0 / (9.0 * k));
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace

TEST_CASE("frame_indices examples") {
  const auto a = frame_indices(tt(1, Direction::forward, 10), 16);
  REQUIRE(a.size() == 16);
  for (int i = 0; i < 16; ++i) CHECK(a[i] == 10 + 2 * i);
  CHECK(a.back() == 40);
  CHECK(frame_indices(tt(0, Direction::forward, 0), 4) == std::vector<int>{0, 1, 2, 3});
  CHECK(frame_indices(tt(0, Direction::reverse, 0), 4) == std::vector<int>{3, 2, 1, 0});
}

TEST_CASE("frame_indices monotone with constant stride inside the extent") {
  Rng rng(11);
  for (int trial = 0; trial < 10000; ++trial) {
    const int k = static_cast<int>(rng() % 4);
    const auto d = rng() % 2 ? Direction::reverse : Direction::forward;
    const int start = static_cast<int>(rng() % 50);
    const int len = 1 + static_cast<int>(rng() % 20);
    const auto tau = tt(k, d, start);
    const auto idx = frame_indices(tau, len);
    REQUIRE(static_cast<int>(idx.size()) == len);
    for (int i = 0; i < len; ++i) {
      REQUIRE(idx[i] >= start);
      REQUIRE(idx[i] < start + tau.extent(len));
      if (i > 0) REQUIRE(idx[i] - idx[i - 1] == (d == Direction::forward ? 1 : -1) * (1 << k));
    }
    // reverse visits the same index set as forward
    auto fwd = frame_indices(tt(k, Direction::forward, start), len);
    auto rev = frame_indices(tt(k, Direction::reverse, start), len);
    std::reverse(rev.begin(), rev.end());
    REQUIRE(fwd == rev);
  }
}

TEST_CASE("apply_temporal gathers the indexed frames") {
  const auto v = frame_tagged(64);
  const auto c = apply_temporal(v, tt(2, Direction::forward, 0), 16);
  CHECK(c.frames == 16);
  CHECK(c.height == 8);
  for (int t = 0; t < 16; ++t) CHECK(std::lround(c.at(t, 3, 3, 0) * 255.0f) == 4 * t);
}

TEST_CASE("reversal is an involution at speed 1 over the full clip") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int t = 1 + static_cast<int>(rng() % 24);
    const auto v = ramp_video(t, 8, 8, 3);
    const auto r = tt(0, Direction::reverse, 0);
    const auto twice = apply_temporal(apply_temporal(v, r, t), r, t);
    REQUIRE(twice.data == v.data);
  }
}

TEST_CASE("apply_temporal rejects transforms past the video end") {
  const auto v = frame_tagged(16);
  CHECK_THROWS_WITH(apply_temporal(v, tt(3, Direction::forward, 0), 16), "transform exceeds video length");
  CHECK_THROWS_WITH(apply_temporal(v, tt(0, Direction::forward, 1), 16), "transform exceeds video length");
}

TEST_CASE("sample_temporal_transform edge cases") {
  Rng rng(1);
  TemporalSamplingConfig only_one;
  only_one.speed_exponents = {0};
  only_one.allow_reverse = false;
  for (int i = 0; i < 20; ++i) {
    const auto t = sample_temporal_transform(rng, 16, 16, only_one);
    CHECK(t == tt(0, Direction::forward, 0));
  }
  TemporalSamplingConfig fast;
  fast.speed_exponents = {1, 2, 3};
  CHECK_THROWS_WITH(sample_temporal_transform(rng, 20, 16, fast), "video too short");
}

TEST_CASE("sampled transforms always fit their video") {
  Rng rng(5);
  for (int trial = 0; trial < 10000; ++trial) {
    const int clip = 1 + static_cast<int>(rng() % 16);
    const int len = clip + static_cast<int>(rng() % 140);
    TemporalSamplingConfig cfg;
    cfg.allow_reverse = rng() % 2;
    const auto t = sample_temporal_transform(rng, len, clip, cfg);
    REQUIRE(t.start_frame >= 0);
    REQUIRE(t.start_frame + t.extent(clip) <= len);
    if (!cfg.allow_reverse) REQUIRE(t.direction == Direction::forward);
  }
}

TEST_CASE("start frames are uniform per speed (chi-square)") {
  Rng rng(2024);
  TemporalSamplingConfig cfg;
  std::map<int, std::vector<int>> counts;
  std::map<int, int> speed_counts;
  const int draws = 10000, len = 128, clip = 16;
  for (int i = 0; i < draws; ++i) {
    const auto t = sample_temporal_transform(rng, len, clip, cfg);
    auto& c = counts[t.speed_exponent];
    c.resize(len - t.extent(clip) + 1);
    ++c[t.start_frame];
    ++speed_counts[t.speed_exponent];
  }
  // speeds themselves uniform
  double speed_stat = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double e = draws / 4.0;
    speed_stat += (speed_counts[k] - e) * (speed_counts[k] - e) / e;
  }
  CHECK(speed_stat < 11.34);  // chi-square 3 dof, p = 0.01
  for (auto& [k, c] : counts) {
    if (c.size() < 2) continue;  // 8x speed has a single feasible start
    const double total = speed_counts[k];
    const double e = total / c.size();
    double stat = 0.0;
    for (int n : c) stat += (n - e) * (n - e) / e;
    const double p = chi_square_p(stat, static_cast<int>(c.size()) - 1);
    INFO("speed " << k << " p=" << p);
    CHECK(p > 0.01);
  }
}

TEST_CASE("relative_descriptor") {
  const auto r = relative_descriptor(tt(0, Direction::forward, 4), tt(0, Direction::forward, 24));
  CHECK(r.speed_pair == std::array<int, 2>{0, 0});
  CHECK(r.direction_pair == std::array<Direction, 2>{Direction::forward, Direction::forward});
  CHECK(r.delta_start == 20);
  const auto same = tt(2, Direction::reverse, 7);
  CHECK(relative_descriptor(same, same).delta_start == 0);

  Rng rng(9);
  TemporalSamplingConfig cfg;
  for (int i = 0; i < 10000; ++i) {
    const auto p = sample_temporal_transform(rng, 128, 16, cfg);
    const auto q = sample_temporal_transform(rng, 128, 16, cfg);
    const auto pq = relative_descriptor(p, q);
    const auto qp = relative_descriptor(q, p);
    REQUIRE(qp.delta_start == -pq.delta_start);
    REQUIRE(qp.speed_pair == std::array<int, 2>{pq.speed_pair[1], pq.speed_pair[0]});
    REQUIRE(qp.direction_pair == std::array<Direction, 2>{pq.direction_pair[1], pq.direction_pair[0]});
    // equality is exact tuple equality
    const bool tuples_equal = p.speed_exponent == q.speed_exponent && p.direction == q.direction;
    REQUIRE((pq == qp) == (tuples_equal && pq.delta_start == 0));
  }
}

TEST_CASE("overlap_order_label examples") {
  // [0,16) vs [20,36)
  CHECK(overlap_order_label(tt(0, Direction::forward, 0), tt(0, Direction::forward, 20), 16) ==
        OverlapOrder::p_before_q);
  // [0,32) vs [16,48)
  CHECK(overlap_order_label(tt(1, Direction::forward, 0), tt(1, Direction::forward, 16), 16) ==
        OverlapOrder::overlapping);
  // adjacent intervals do not intersect
  CHECK(overlap_order_label(tt(0, Direction::forward, 16), tt(0, Direction::forward, 0), 16) ==
        OverlapOrder::p_after_q);
}

TEST_CASE("overlap_order_label matches a brute-force oracle on the exhaustive grid") {
  const int video = 64, clip = 8;
  int checked = 0;
  for (int kp = 0; kp < 4; ++kp)
    for (int kq = 0; kq < 4; ++kq)
      for (int sp = 0; sp + (clip << kp) <= video; ++sp)
        for (int sq = 0; sq + (clip << kq) <= video; ++sq)
          for (int dp = 0; dp < 2; ++dp)
            for (int dq = 0; dq < 2; ++dq) {
              const auto p = tt(kp, static_cast<Direction>(dp), sp);
              const auto q = tt(kq, static_cast<Direction>(dq), sq);
              const OverlapOrder expect = oracle::overlap_order(p, q, clip);
              REQUIRE(overlap_order_label(p, q, clip) == expect);
              // antisymmetry
              const auto back = overlap_order_label(q, p, clip);
              if (expect == OverlapOrder::overlapping) REQUIRE(back == OverlapOrder::overlapping);
              if (expect == OverlapOrder::p_before_q) REQUIRE(back == OverlapOrder::p_after_q);
              if (expect == OverlapOrder::p_after_q) REQUIRE(back == OverlapOrder::p_before_q);
              ++checked;
            }
  CHECK(checked > 10000);
}

TEST_CASE("identity augmentation leaves the clip unchanged") {
  const auto v = ramp_video(4, 16, 16, 3);
  const auto out = apply_spatial(v, identity_augmentation(16, 16), 16);
  REQUIRE(out.data.size() == v.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));
}

TEST_CASE("double flip and brightness inverse") {
  const auto v = ramp_video(3, 12, 12, 3);
  auto flip = identity_augmentation(12, 12);
  flip.horizontal_flip = true;
  const auto twice = apply_spatial(apply_spatial(v, flip, 12), flip, 12);
  for (std::size_t i = 0; i < v.data.size(); ++i) REQUIRE(twice.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));

  // mid-grey content keeps the shifts away from the clamp
  VideoTensor g(2, 8, 8, 3);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = 0.3f + 0.4f * static_cast<float>(i % 7) / 7.0f;
  auto up = identity_augmentation(8, 8), down = identity_augmentation(8, 8);
  up.brightness_shift = 0.15;
  down.brightness_shift = -0.15;
  const auto back = apply_spatial(apply_spatial(g, up, 8), down, 8);
  for (std::size_t i = 0; i < g.data.size(); ++i) REQUIRE(std::abs(back.data[i] - g.data[i]) < 1e-6);
}

TEST_CASE("spatial augmentation is temporally consistent and clamped") {
  Rng rng(8);
  VideoTensor v(6, 32, 32, 3);
  for (int t = 0; t < 6; ++t)
    for (std::size_t i = 0; i < v.frame_size(); ++i)
      v.data[t * v.frame_size() + i] = static_cast<float>((i * 13) % 97) / 96.0f;  // identical frames
  SpatialSamplingConfig cfg;
  cfg.max_brightness = 0.2;
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = sample_spatial_augmentation(rng, 32, 32, cfg);
    REQUIRE(s.top >= 0);
    REQUIRE(s.left >= 0);
    REQUIRE(s.top + s.crop_height <= 32);
    REQUIRE(s.left + s.crop_width <= 32);
    REQUIRE(std::abs(s.brightness_shift) <= 0.2);
    REQUIRE(s.contrast_scale >= 0.8 - 1e-12);
    REQUIRE(s.contrast_scale <= 1.25 + 1e-12);
    const auto out = apply_spatial(v, s, 24);
    REQUIRE(out.height == 24);
    REQUIRE(out.width == 24);
    for (float x : out.data) REQUIRE((x >= 0.0f && x <= 1.0f));
    for (int t = 1; t < 6; ++t)
      for (std::size_t i = 0; i < out.frame_size(); ++i)
        REQUIRE(out.data[t * out.frame_size() + i] == out.data[i]);
  }
}

TEST_CASE("invalid crops are rejected") {
  const auto v = ramp_video(2, 16, 16, 1);
  auto s = identity_augmentation(16, 16);
  s.left = 4;
  CHECK_THROWS(apply_spatial(v, s, 16));
  s = identity_augmentation(16, 16);
  s.crop_height = 0;
  CHECK_THROWS(apply_spatial(v, s, 16));
}

TEST_CASE("VideoTensor validation") {
  VideoTensor ok(2, 8, 8, 3);
  CHECK_NOTHROW(ok.validate());
  VideoTensor small(2, 4, 8, 3);
  CHECK_THROWS(small.validate());
  VideoTensor bad(1, 8, 8, 1);
  bad.data[3] = 1.5f;
  CHECK_THROWS(bad.validate());
  VideoTensor nan(1, 8, 8, 1);
  nan.data[0] = std::nanf("");
  CHECK_THROWS(nan.validate());
}
