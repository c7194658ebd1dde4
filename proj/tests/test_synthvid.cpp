#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "teq/evalkit.hpp"
#include "teq/synthvid.hpp"

using namespace teq;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "teq_test_synthvid";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Independent little-endian reader used to check the layout byte by byte.
std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return b[off] + 256u * b[off + 1] + 65536u * b[off + 2] + 16777216u * b[off + 3];
}

Dataset random_dataset(Rng& rng) {
  std::uniform_int_distribution<int> dim(1, 5), count(0, 6), lab(0, 65535);
  Dataset d;
  d.frames = dim(rng);
  d.height = dim(rng);
  d.width = dim(rng);
  d.channels = dim(rng);
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    VideoU8 v;
    v.frames = d.frames;
    v.height = d.height;
    v.width = d.width;
    v.channels = d.channels;
    v.data.resize(static_cast<std::size_t>(d.frames) * d.height * d.width * d.channels);
    for (auto& px : v.data) px = static_cast<std::uint8_t>(rng());
    d.videos.push_back(std::move(v));
    d.labels.push_back(lab(rng));
  }
  return d;
}

// Mean-pools a frame to 4x4 cells per channel.
std::vector<double> pooled_frame(const VideoU8& v, int t) {
  const int cells = 4, ch = v.channels;
  std::vector<double> out(static_cast<std::size_t>(cells) * cells * ch, 0.0);
  const int cy = v.height / cells, cx = v.width / cells;
  for (int y = 0; y < v.height; ++y)
    for (int x = 0; x < v.width; ++x)
      for (int c = 0; c < ch; ++c)
        out[((y / cy) * cells + x / cx) * ch + c] +=
            v.data[t * v.frame_size() + (static_cast<std::size_t>(y) * v.width + x) * ch + c] /
            (255.0 * cy * cx);
  return out;
}

}  // namespace

TEST_CASE("motion classes are distinct triples with sequential ids") {
  const auto& classes = motion_classes();
  REQUIRE(classes.size() == 8);
  std::set<std::tuple<Trajectory, SpeedProfile, int>> seen;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    CHECK(classes[i].class_id == static_cast<int>(i));
    seen.insert({classes[i].trajectory, classes[i].speed_profile, classes[i].heading_degrees});
  }
  CHECK(seen.size() == classes.size());
}

TEST_CASE("fvc length formula") {
  CHECK(kFvcHeaderBytes == 4 + 5 * 4 + 1);
  CHECK(fvc_file_size(800, 128, 32, 32, 3) == 25 + 800ull * 128 * 32 * 32 * 3 + 1600);
  CHECK(fvc_file_size(0, 1, 1, 1, 1) == 25);
}

TEST_CASE("generated file has the documented layout") {
  GenerateOptions o;
  o.n_classes = 3;
  o.n_per_class = 2;
  o.frames = 5;
  o.height = 8;
  o.width = 12;
  const Dataset d = generate_dataset(9, o);
  const auto path = temp_path("layout.fvc");
  save_dataset(d, path);
  const auto b = read_bytes(path);
  REQUIRE(b.size() == 25 + 6 * 5 * 8 * 12 * 3 + 2 * 6);
  CHECK(std::string(b.begin(), b.begin() + 4) == "FVC1");
  CHECK(le32(b, 4) == 6);
  CHECK(le32(b, 8) == 5);
  CHECK(le32(b, 12) == 8);
  CHECK(le32(b, 16) == 12);
  CHECK(le32(b, 20) == 3);
  CHECK(b[24] == 0);
  // pixel (video 4, t 3, row 2, col 7, channel 1)
  const std::size_t off = 25 + (((4 * 5 + 3) * 8 + 2) * 12 + 7) * 3 + 1;
  CHECK(b[off] == d.videos[4].data[((3 * 8 + 2) * 12 + 7) * 3 + 1]);
  const std::size_t labels = 25 + 6 * 5 * 8 * 12 * 3;
  for (int i = 0; i < 6; ++i) {
    CHECK(b[labels + 2 * i] == i % 3);
    CHECK(b[labels + 2 * i + 1] == 0);
  }
}

TEST_CASE("round trip is the identity on random datasets") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Dataset d = random_dataset(rng);
    const auto bytes = encode_fvc(d);
    CHECK(bytes.size() == fvc_file_size(d.size(), d.frames, d.height, d.width, d.channels));
    const Dataset r = decode_fvc(bytes);
    REQUIRE(r.size() == d.size());
    CHECK(r.frames == d.frames);
    CHECK(r.channels == d.channels);
    CHECK(r.labels == d.labels);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(r.videos[i].data == d.videos[i].data);
    CHECK(encode_fvc(r) == bytes);
  }
}

TEST_CASE("file round trip is byte identical") {
  GenerateOptions o;
  o.n_per_class = 1;
  o.frames = 16;
  const Dataset d = generate_dataset(4, o);
  const auto a = temp_path("a.fvc"), b = temp_path("b.fvc");
  save_dataset(d, a);
  save_dataset(load_dataset(a), b);
  CHECK(read_bytes(a) == read_bytes(b));
}

TEST_CASE("loader rejects malformed files") {
  GenerateOptions o;
  o.n_classes = 2;
  o.n_per_class = 1;
  o.frames = 2;
  o.height = 8;
  o.width = 8;
  auto bytes = encode_fvc(generate_dataset(1, o));

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_WITH(decode_fvc(truncated), "fvc file length mismatch");
  CHECK_THROWS_WITH(decode_fvc(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10)),
                    "fvc file truncated");
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_WITH(decode_fvc(longer), "fvc file length mismatch");
  auto magic = bytes;
  magic[3] = '2';
  CHECK_THROWS_WITH(decode_fvc(magic), "not an fvc file (bad magic)");
  auto dtype = bytes;
  dtype[24] = 1;
  CHECK_THROWS_WITH(decode_fvc(dtype), "unsupported fvc dtype");

  const auto path = temp_path("truncated.fvc");
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(truncated.data()),
                                              static_cast<std::streamsize>(truncated.size()));
  CHECK_THROWS(load_dataset(path));
  CHECK_THROWS(load_dataset(temp_path("missing.fvc")));
}

TEST_CASE("generation is deterministic and class balanced") {
  GenerateOptions o;
  o.n_per_class = 3;
  o.frames = 24;
  const auto a = encode_fvc(generate_dataset(77, o));
  CHECK(a == encode_fvc(generate_dataset(77, o)));
  CHECK(a != encode_fvc(generate_dataset(78, o)));

  const Dataset d = generate_dataset(77, o);
  std::vector<int> counts(8, 0);
  for (int label : d.labels) ++counts[label];
  for (int c : counts) CHECK(c == 3);
}

TEST_CASE("generator rejects infeasible requests") {
  GenerateOptions o;
  o.n_classes = 9;
  CHECK_THROWS(generate_dataset(0, o));
  o.n_classes = 0;
  CHECK_THROWS(generate_dataset(0, o));
  o = GenerateOptions{};
  o.n_per_class = 0;
  CHECK_THROWS(generate_dataset(0, o));
  CHECK_THROWS_WITH(render_video(0, motion_classes()[0], 4, 6, 32, 3), "sprite larger than frame");
  CHECK_THROWS(render_video(0, motion_classes()[0], 0, 32, 32, 3));
  CHECK_THROWS(render_video(0, motion_classes()[0], 4, 32, 32, 2));
}

TEST_CASE("appearance is independent of class") {
  // same per-video seed rendered with two classes: the first frame is identical
  // because motion has not started, and later frames differ
  const auto& classes = motion_classes();
  const VideoU8 a = render_video(123, classes[0], 40, 32, 32, 3);
  const VideoU8 b = render_video(123, classes[3], 40, 32, 32, 3);
  const std::size_t fs = a.frame_size();
  CHECK(std::equal(a.data.begin(), a.data.begin() + fs, b.data.begin()));
  CHECK(!std::equal(a.data.begin() + 39 * fs, a.data.begin() + 40 * fs, b.data.begin() + 39 * fs));
}

TEST_CASE("videos contain motion") {
  const VideoU8 v = render_video(5, motion_classes()[0], 32, 32, 32, 3);
  const std::size_t fs = v.frame_size();
  for (int t = 1; t < 32; t += 8)
    CHECK(!std::equal(v.data.begin(), v.data.begin() + fs, v.data.begin() + t * fs));
}

TEST_CASE("single shuffled frames carry no class information") {
  GenerateOptions o;
  o.frames = 128;
  o.n_per_class = 40;
  const Dataset train = generate_dataset(31, o);
  o.n_per_class = 20;
  const Dataset test = generate_dataset(32, o);

  // one random frame per video, so temporal order is gone entirely
  Rng rng(8);
  auto frames = [&](const Dataset& d) {
    FeatureMatrix m(static_cast<Eigen::Index>(d.size()), 4 * 4 * 3);
    std::uniform_int_distribution<int> pick(0, d.frames - 1);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto f = pooled_frame(d.videos[i], pick(rng));
      for (std::size_t j = 0; j < f.size(); ++j) m(static_cast<Eigen::Index>(i), j) = f[j];
    }
    return m;
  };
  const FeatureMatrix tr = frames(train), te = frames(test);
  const FeatureBank train_bank = make_bank(tr, train.labels);
  const FeatureBank test_bank = make_bank(te, test.labels, &train_bank.stats);
  const double chance = 1.0 / 8;
  const double probe = linear_probe(train_bank, test_bank);
  const double nn = nn_classify(train_bank, test_bank);
  MESSAGE("single-frame probe " << probe << " 1-NN " << nn);
  // 160 test videos: 3 standard errors around chance is about 8 points
  CHECK(probe < chance + 0.08);
  CHECK(nn < chance + 0.08);
}
