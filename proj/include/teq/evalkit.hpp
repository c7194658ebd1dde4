#pragma once

// Frozen-feature evaluation: multi-crop feature banks, cosine k-NN retrieval,
// 1-NN and linear-probe classification, and the relative-transformation
// matching diagnostic.

#include <filesystem>
#include <vector>

#include "teq/encoder.hpp"
#include "teq/synthvid.hpp"
#include "teq/trainloop.hpp"

namespace teq {

using FeatureMatrix = nn::Matrix<double>;

struct CropConfig {
  int temporal_crops = 4;
  int spatial_crops = 1;    // 1 (centre) or 5 (centre + corners)
  int speed_exponent = 2;   // playback speed of evaluation clips
  double crop_scale = 0.875;
  int batch = 32;           // clips per forward pass
};

struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Standardization fit(const FeatureMatrix& raw);
  FeatureMatrix apply(const FeatureMatrix& raw) const;
};

struct FeatureBank {
  FeatureMatrix features;  // standardised, one row per video
  std::vector<int> labels;
  Standardization stats;   // always the training split's statistics

  std::size_t size() const { return labels.size(); }
};

/// Temporal transforms of the evenly spaced evaluation crops.
std::vector<TemporalTransform> evaluation_crops(int video_len, int clip_len, const CropConfig& crops);
/// Spatial augmentations of the deterministic evaluation crops.
std::vector<SpatialAugmentation> evaluation_views(int height, int width, const CropConfig& crops);

/// Per-video mean embedding over all crops (before standardisation).
FeatureMatrix raw_features(Encoder<float>& encoder, const Dataset& data, const CropConfig& crops);

/// Builds a bank from raw features; `train_stats` null means `raw` is the
/// training split and its own statistics are used.
FeatureBank make_bank(const FeatureMatrix& raw, std::vector<int> labels,
                      const Standardization* train_stats = nullptr);

FeatureBank extract_features(Encoder<float>& encoder, const Dataset& data, const CropConfig& crops,
                             const Standardization* train_stats = nullptr);

/// R@k for each k: fraction of queries with a same-class item among their k
/// most cosine-similar gallery rows. With `exclude_self`, query row i never
/// matches gallery row i (query and gallery are the same set).
std::vector<double> retrieval_recall(const FeatureBank& query, const FeatureBank& gallery,
                                     const std::vector<int>& ks, bool exclude_self = false);

/// 1-nearest-neighbour accuracy under cosine similarity.
double nn_classify(const FeatureBank& train, const FeatureBank& test, bool exclude_self = false);

struct ProbeConfig {
  int iterations = 300;
  double learning_rate = 0.05;
  double weight_decay = 1e-3;
};

/// Multinomial logistic regression on frozen features; returns test accuracy.
double linear_probe(const FeatureBank& train, const FeatureBank& test, const ProbeConfig& config = {});

struct DiagnosticResult {
  double match_accuracy = 0.0;
  double chance = 0.0;  // expected accuracy of a random nearest neighbour
  double speed_accuracy = 0.0;
  double direction_accuracy = 0.0;
  double overlap_accuracy = 0.0;
  int codes = 0;
};

/// Samples n_probes / 2 couples from `data` as the batch planner does, giving
/// one relative-transformation code per probe, and scores whether each code's
/// nearest other code shares its relative transformation. Also reports
/// auxiliary-head accuracies on the same clips.
DiagnosticResult equivariance_diagnostic(Encoder<float>& encoder, const Dataset& data,
                                         int n_probes, const TrainConfig& config,
                                         std::uint64_t seed);

void save_bank(const FeatureBank& bank, const std::filesystem::path& path);
FeatureBank load_bank(const std::filesystem::path& path);

}  // namespace teq
