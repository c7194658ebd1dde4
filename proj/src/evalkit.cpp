#include "teq/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "teq/archive.hpp"

namespace teq {

// -------------------------------------------------------- standardisation

Standardization Standardization::fit(const FeatureMatrix& raw) {
  if (raw.rows() == 0) throw Error("cannot standardise an empty bank");
  Standardization s;
  const auto n = static_cast<double>(raw.rows());
  s.mean.resize(raw.cols());
  s.stddev.resize(raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const double m = raw.col(c).sum() / n;
    const double var = (raw.col(c).array() - m).square().sum() / n;
    s.mean[c] = m;
    // constant dimensions map to zero instead of dividing by zero
    s.stddev[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

FeatureMatrix Standardization::apply(const FeatureMatrix& raw) const {
  if (static_cast<std::size_t>(raw.cols()) != mean.size()) {
    throw Error("feature dimension does not match standardisation");
  }
  FeatureMatrix out(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    out.col(c) = (raw.col(c).array() - mean[c]) / stddev[c];
  }
  return out;
}

// ----------------------------------------------------------- extraction

std::vector<TemporalTransform> evaluation_crops(int video_len, int clip_len,
                                                const CropConfig& crops) {
  if (crops.temporal_crops < 1) throw Error("need at least one temporal crop");
  TemporalTransform base;
  base.speed_exponent = crops.speed_exponent;
  const int extent = base.extent(clip_len);
  if (extent > video_len) throw Error("evaluation crops exceed video length");
  std::vector<TemporalTransform> out;
  const int span = video_len - extent;
  for (int i = 0; i < crops.temporal_crops; ++i) {
    TemporalTransform t = base;
    t.start_frame = crops.temporal_crops == 1
                        ? span / 2
                        : static_cast<int>(std::lround(static_cast<double>(i) * span /
                                                       (crops.temporal_crops - 1)));
    out.push_back(t);
  }
  return out;
}

std::vector<SpatialAugmentation> evaluation_views(int height, int width, const CropConfig& crops) {
  const int side = std::clamp(static_cast<int>(std::lround(crops.crop_scale * std::min(height, width))),
                              1, std::min(height, width));
  auto box = [&](int top, int left) {
    SpatialAugmentation s;
    s.top = top;
    s.left = left;
    s.crop_height = side;
    s.crop_width = side;
    return s;
  };
  std::vector<SpatialAugmentation> out{box((height - side) / 2, (width - side) / 2)};
  if (crops.spatial_crops == 5) {
    out.push_back(box(0, 0));
    out.push_back(box(0, width - side));
    out.push_back(box(height - side, 0));
    out.push_back(box(height - side, width - side));
  } else if (crops.spatial_crops != 1) {
    throw Error("spatial crops must be 1 or 5");
  }
  return out;
}

FeatureMatrix raw_features(Encoder<float>& encoder, const Dataset& data, const CropConfig& crops) {
  const auto& cfg = encoder.config();
  const auto taus = evaluation_crops(data.frames, cfg.clip_len, crops);
  const auto views = evaluation_views(data.height, data.width, crops);
  const std::size_t per_video = taus.size() * views.size();
  FeatureMatrix out = FeatureMatrix::Zero(static_cast<Eigen::Index>(data.size()), cfg.dim);

  std::vector<VideoTensor> pending;
  std::vector<std::size_t> owner;
  auto flush = [&] {
    if (pending.empty()) return;
    const auto emb = encoder.embed(std::span<const VideoTensor>(pending), false);
    for (std::size_t r = 0; r < pending.size(); ++r) {
      out.row(static_cast<Eigen::Index>(owner[r])) += emb.row(r).cast<double>();
    }
    pending.clear();
    owner.clear();
  };
  for (std::size_t v = 0; v < data.size(); ++v) {
    for (const auto& tau : taus) {
      const VideoTensor clip = apply_temporal(data.videos[v], tau, cfg.clip_len);
      for (const auto& view : views) {
        pending.push_back(apply_spatial(clip, view, cfg.resolution));
        owner.push_back(v);
        if (static_cast<int>(pending.size()) >= crops.batch) flush();
      }
    }
  }
  flush();
  out /= static_cast<double>(per_video);
  return out;
}

FeatureBank make_bank(const FeatureMatrix& raw, std::vector<int> labels,
                      const Standardization* train_stats) {
  if (static_cast<std::size_t>(raw.rows()) != labels.size()) {
    throw Error("one label per feature row required");
  }
  FeatureBank bank;
  bank.stats = train_stats ? *train_stats : Standardization::fit(raw);
  bank.features = bank.stats.apply(raw);
  bank.labels = std::move(labels);
  return bank;
}

FeatureBank extract_features(Encoder<float>& encoder, const Dataset& data, const CropConfig& crops,
                             const Standardization* train_stats) {
  return make_bank(raw_features(encoder, data, crops), data.labels, train_stats);
}

// -------------------------------------------------------------- metrics

namespace {

FeatureMatrix normalized_rows(const FeatureMatrix& m) {
  FeatureMatrix out = m;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n > 0.0) out.row(r) /= n;
  }
  return out;
}

// Gallery indices sorted by decreasing cosine similarity, ties by index.
std::vector<std::vector<int>> ranked_neighbours(const FeatureBank& query, const FeatureBank& gallery,
                                                bool exclude_self) {
  if (query.size() == 0 || gallery.size() == 0) throw Error("empty feature bank");
  if (query.features.cols() != gallery.features.cols()) throw Error("feature dimension mismatch");
  if (exclude_self && query.size() != gallery.size()) {
    throw Error("self exclusion needs identical query and gallery sets");
  }
  const FeatureMatrix sim = normalized_rows(query.features) * normalized_rows(gallery.features).transpose();
  std::vector<std::vector<int>> ranked(query.size());
  for (std::size_t q = 0; q < query.size(); ++q) {
    auto& r = ranked[q];
    for (int g = 0; g < static_cast<int>(gallery.size()); ++g)
      if (!exclude_self || g != static_cast<int>(q)) r.push_back(g);
    std::stable_sort(r.begin(), r.end(), [&](int a, int b) { return sim(q, a) > sim(q, b); });
  }
  return ranked;
}

}  // namespace

std::vector<double> retrieval_recall(const FeatureBank& query, const FeatureBank& gallery,
                                     const std::vector<int>& ks, bool exclude_self) {
  const auto ranked = ranked_neighbours(query, gallery, exclude_self);
  std::vector<double> out;
  for (int k : ks) {
    if (k < 1) throw Error("k must be positive");
    int hits = 0;
    for (std::size_t q = 0; q < query.size(); ++q) {
      const auto& r = ranked[q];
      const std::size_t limit = std::min<std::size_t>(k, r.size());
      for (std::size_t i = 0; i < limit; ++i) {
        if (gallery.labels[r[i]] == query.labels[q]) {
          ++hits;
          break;
        }
      }
    }
    out.push_back(static_cast<double>(hits) / query.size());
  }
  return out;
}

double nn_classify(const FeatureBank& train, const FeatureBank& test, bool exclude_self) {
  const auto ranked = ranked_neighbours(test, train, exclude_self);
  int correct = 0;
  for (std::size_t q = 0; q < test.size(); ++q) {
    if (!ranked[q].empty() && train.labels[ranked[q].front()] == test.labels[q]) ++correct;
  }
  return static_cast<double>(correct) / test.size();
}

double linear_probe(const FeatureBank& train, const FeatureBank& test, const ProbeConfig& cfg) {
  if (train.size() == 0 || test.size() == 0) throw Error("empty feature bank");
  const std::set<int> classes(train.labels.begin(), train.labels.end());
  if (classes.size() < 2) throw Error("linear probe needs at least two training classes");
  const int n_classes = std::max(*classes.rbegin(), *std::max_element(test.labels.begin(), test.labels.end())) + 1;
  const auto n = train.features.rows();
  const auto d = train.features.cols();

  // full-batch Adam on the mean cross-entropy plus L2 penalty
  FeatureMatrix w = FeatureMatrix::Zero(d, n_classes);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(n_classes);
  FeatureMatrix mw = w, vw = w;
  Eigen::RowVectorXd mb = b, vb = b;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int it = 1; it <= cfg.iterations; ++it) {
    FeatureMatrix logits = train.features * w;
    logits.rowwise() += b;
    FeatureMatrix p = nn::softmax_rows<double>(logits);
    for (Eigen::Index r = 0; r < n; ++r) p(r, train.labels[r]) -= 1.0;
    p /= static_cast<double>(n);
    const FeatureMatrix gw = train.features.transpose() * p + cfg.weight_decay * w;
    const Eigen::RowVectorXd gb = p.colwise().sum();
    const double c1 = 1.0 - std::pow(b1, it), c2 = 1.0 - std::pow(b2, it);
    mw = b1 * mw + (1 - b1) * gw;
    vw = b2 * vw.array() + (1 - b2) * gw.array().square();
    mb = b1 * mb + (1 - b1) * gb;
    vb = b2 * vb.array() + (1 - b2) * gb.array().square();
    w.array() -= cfg.learning_rate * (mw.array() / c1) / ((vw.array() / c2).sqrt() + eps);
    b.array() -= cfg.learning_rate * (mb.array() / c1) / ((vb.array() / c2).sqrt() + eps);
  }

  FeatureMatrix logits = test.features * w;
  logits.rowwise() += b;
  int correct = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index arg = 0;
    logits.row(r).maxCoeff(&arg);
    if (static_cast<int>(arg) == test.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / test.size();
}

// ------------------------------------------------------------ diagnostic

DiagnosticResult equivariance_diagnostic(Encoder<float>& encoder, const Dataset& data,
                                         int n_probes, const TrainConfig& config,
                                         std::uint64_t seed) {
  if (n_probes < 2) throw Error("diagnostic needs at least two probes");
  if (n_probes % 2 != 0) throw Error("diagnostic probes come in couples; use an even count");
  if (data.size() < 2) throw Error("diagnostic needs at least two videos");
  Rng rng(seed);

  // one video slot per probe (at least a minimal batch), cycling through
  // shuffled copies of the dataset
  const std::size_t slots = std::max(4, n_probes);
  std::vector<int> videos;
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  while (videos.size() < slots) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int v : order) {
      if (videos.size() == slots) break;
      videos.push_back(v);
    }
  }
  TrainConfig plan_cfg = config;
  plan_cfg.distinctiveness = false;
  plan_cfg.encoder = encoder.config();
  std::vector<int> frames(data.size(), data.frames);
  BatchPlan plan = plan_batch(rng, videos, frames, data.height, data.width, plan_cfg);
  plan.couples.resize(static_cast<std::size_t>(n_probes / 2));
  const auto clips = materialize_clips(plan, data, plan_cfg, rng);

  // eval-mode embeddings in chunks
  const int D = encoder.config().dim;
  nn::Matrix<float> emb(static_cast<Eigen::Index>(clips.size()), D);
  constexpr std::size_t chunk = 32;
  for (std::size_t s = 0; s < clips.size(); s += chunk) {
    const std::size_t e = std::min(clips.size(), s + chunk);
    emb.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(e - s)) =
        encoder.embed(std::span<const VideoTensor>(clips.data() + s, e - s), false);
  }
  const auto n_videos = static_cast<Eigen::Index>(clips.size() / 2);
  nn::Matrix<float> e_p(n_videos, D), e_q(n_videos, D);
  for (Eigen::Index m = 0; m < n_videos; ++m) {
    e_p.row(m) = emb.row(2 * m);
    e_q.row(m) = emb.row(2 * m + 1);
  }

  std::vector<CoupleDescriptor> desc;
  for (const auto& c : plan.couples) desc.push_back(couple_descriptor(c, plan_cfg));

  DiagnosticResult out;
  out.codes = static_cast<int>(n_videos);
  const FeatureMatrix codes = normalized_rows(encoder.psi_forward(e_p, e_q).cast<double>());
  const FeatureMatrix sim = codes * codes.transpose();
  int hits = 0;
  double chance = 0.0;
  for (Eigen::Index a = 0; a < n_videos; ++a) {
    Eigen::Index best = -1;
    int sharing = 0;
    for (Eigen::Index b = 0; b < n_videos; ++b) {
      if (b == a) continue;
      if (desc[b / 2] == desc[a / 2]) ++sharing;
      if (best < 0 || sim(a, b) > sim(a, best)) best = b;
    }
    if (desc[best / 2] == desc[a / 2]) ++hits;
    chance += static_cast<double>(sharing) / (n_videos - 1);
  }
  out.match_accuracy = static_cast<double>(hits) / n_videos;
  out.chance = chance / n_videos;

  auto accuracy = [](const nn::Matrix<float>& logits, const std::vector<int>& labels) {
    int ok = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index arg = 0;
      logits.row(r).maxCoeff(&arg);
      if (static_cast<int>(arg) == labels[r]) ++ok;
    }
    return static_cast<double>(ok) / logits.rows();
  };
  std::vector<int> speed(clips.size()), dir(clips.size()), overlap(n_videos);
  for (std::size_t c = 0; c < plan.couples.size(); ++c) {
    const auto& cp = plan.couples[c];
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& tau = k % 2 == 0 ? cp.tau_p : cp.tau_q;
      speed[4 * c + k] = tau.speed_exponent;
      dir[4 * c + k] = static_cast<int>(tau.direction);
    }
    const int label = static_cast<int>(overlap_order_label(cp.tau_p, cp.tau_q, encoder.config().clip_len));
    overlap[2 * c] = overlap[2 * c + 1] = label;
  }
  out.speed_accuracy = accuracy(encoder.head_speed(emb), speed);
  out.direction_accuracy = accuracy(encoder.head_direction(emb), dir);
  out.overlap_accuracy = accuracy(encoder.head_overlap(e_p, e_q), overlap);
  return out;
}

// ------------------------------------------------------------ persistence

void save_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  ArrayArchive a;
  const auto rows = static_cast<std::uint64_t>(bank.features.rows());
  const auto cols = static_cast<std::uint64_t>(bank.features.cols());
  std::vector<double> flat(bank.features.data(), bank.features.data() + bank.features.size());
  a.put("features", std::span<const double>(flat), {rows, cols});
  std::vector<std::int64_t> labels(bank.labels.begin(), bank.labels.end());
  a.put("labels", std::span<const std::int64_t>(labels));
  a.put("stats/mean", std::span<const double>(bank.stats.mean));
  a.put("stats/std", std::span<const double>(bank.stats.stddev));
  a.save(path);
}

FeatureBank load_bank(const std::filesystem::path& path) {
  const auto a = ArrayArchive::load(path);
  FeatureBank bank;
  const auto& e = a.entry("features");
  if (e.shape.size() != 2) throw Error("feature bank must be a matrix");
  const auto flat = a.get_f64("features");
  bank.features = Eigen::Map<const FeatureMatrix>(flat.data(), static_cast<Eigen::Index>(e.shape[0]),
                                                  static_cast<Eigen::Index>(e.shape[1]));
  for (auto l : a.get_i64("labels")) bank.labels.push_back(static_cast<int>(l));
  bank.stats.mean = a.get_f64("stats/mean");
  bank.stats.stddev = a.get_f64("stats/std");
  if (bank.labels.size() != e.shape[0]) throw Error("feature bank label count mismatch");
  return bank;
}

}  // namespace teq
