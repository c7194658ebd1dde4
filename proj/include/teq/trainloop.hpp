#pragma once

// Batch planning, the pretraining step, optimisation schedule and
// checkpointing.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "teq/archive.hpp"
#include "teq/clipops.hpp"
#include "teq/encoder.hpp"
#include "teq/objectives.hpp"
#include "teq/synthvid.hpp"

namespace teq {

struct TrainConfig {
  std::string name = "run";
  std::uint64_t seed = 0;

  // Which transformation families the representation should be equivariant to.
  bool equivariant_temporal = true;
  bool equivariant_spatial = false;

  LossWeights weights;
  bool aux_speed = true;
  bool aux_direction = true;
  bool aux_overlap = true;
  // Instance loss over temporal crops of one video treated as distinct
  // instances; no relative-transformation pathway.
  bool distinctiveness = false;

  TemporalSamplingConfig temporal;
  SpatialSamplingConfig spatial;

  int batch_size = 16;  // videos per step
  int epochs = 10;
  int max_steps = 0;    // > 0 overrides the epoch count
  double base_lr = 3e-4;
  double warmup_fraction = 0.05;
  double weight_decay = 1e-4;
  double grad_clip = 10.0;
  double temperature = kDefaultTemperature;
  int collision_retries = 10;
  int workers = 0;  // 0: clips are prepared on the training thread
  int checkpoint_every = 0;  // 0: only the final checkpoint

  EncoderConfig encoder;

  void validate() const;
};

/// Ablation presets, rows 'a' to 'o'.
TrainConfig preset_config(char row);
std::string preset_description(char row);
/// Comparison arm of the batch-size sweep: instance loss over temporal crops
/// as separate instances, no relative-transformation pathway, no aux heads.
TrainConfig distinctiveness_config();
constexpr std::string_view kPresetRows = "abcdefghijklmno";

/// Flat "key = value" serialisation of every TrainConfig field.
std::string to_key_values(const TrainConfig& config);
/// Applies the keys present in `text` on top of `base`. Unknown keys throw.
TrainConfig apply_key_values(TrainConfig base, const std::string& text);

/// Relative spatial geometry between the two clips of a video.
struct SpatialRelative {
  int delta_top = 0;
  int delta_left = 0;
  std::array<bool, 2> flip_pair{};
  auto operator<=>(const SpatialRelative&) const = default;
};

struct CoupleDescriptor {
  std::optional<RelativeTransform> temporal;
  std::optional<SpatialRelative> spatial;
  auto operator<=>(const CoupleDescriptor&) const = default;
};

/// Two videos sharing one relative transformation (tau_p, tau_q).
struct Couple {
  int video_i = 0;
  int video_j = 0;
  TemporalTransform tau_p;
  TemporalTransform tau_q;
  // clip order: (i, p), (i, q), (j, p), (j, q)
  std::array<SpatialAugmentation, 4> sigma;
};

struct BatchPlan {
  std::vector<Couple> couples;
  int collisions = 0;  // exact descriptor collisions left after resampling
};

CoupleDescriptor couple_descriptor(const Couple& couple, const TrainConfig& config);

/// Pairs the given videos into couples and samples their transformations.
/// `video_frames[v]` is the length of video v.
BatchPlan plan_batch(Rng& rng, std::span<const int> videos, std::span<const int> video_frames,
                     int frame_height, int frame_width, const TrainConfig& config);

/// Clip tensors for a plan, in couple-major order (4 clips per couple).
/// In distinctiveness mode each temporal crop gets two spatial views
/// (8 clips per couple: video-major, crop-major, view-minor).
std::vector<VideoTensor> materialize_clips(const BatchPlan& plan, const Dataset& data,
                                           const TrainConfig& config, Rng& rng);

/// Learning rate: linear warmup from 0 then cosine decay to 0 at the last step.
double learning_rate(const TrainConfig& config, long step, long total_steps);

template <class T>
struct AdamState {
  std::vector<nn::Storage<T>> m, v;
};

struct StepRecord {
  long step = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double grad_norm = 0.0;
};

/// Raised when a step produces a non-finite loss; `dump` describes the batch.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::string dump)
      : Error(what), dump(std::move(dump)) {}
  std::string dump;
};

/// Forward/backward of every objective on one planned batch. Fills parameter
/// gradients (accumulating) and returns the loss breakdown. Exposed separately
/// from the optimiser so gradients can be checked.
template <class T>
LossBreakdown compute_losses(Encoder<T>& encoder, const BatchPlan& plan,
                             const std::vector<VideoTensor>& clips, const TrainConfig& config,
                             bool backward, const nn::Matrix<T>* frozen_psi = nullptr,
                             const nn::Matrix<T>* frozen_phi = nullptr,
                             nn::Matrix<T>* psi_out = nullptr, nn::Matrix<T>* phi_out = nullptr);

class Trainer {
 public:
  Trainer(TrainConfig config, const Dataset& train);

  long total_steps() const { return total_steps_; }
  long step() const { return step_; }
  const TrainConfig& config() const { return config_; }
  Encoder<float>& encoder() { return encoder_; }
  const AdamState<float>& adam() const { return adam_; }

  /// The deterministic plan (and clips) for a given step.
  BatchPlan plan_for_step(long step) const;
  std::vector<VideoTensor> clips_for_step(long step, const BatchPlan& plan) const;

  /// One optimisation step on the plan of the current step counter.
  StepRecord train_step();
  StepRecord train_step(const BatchPlan& plan, const std::vector<VideoTensor>& clips);

  ArrayArchive checkpoint() const;
  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, optimiser moments and step counter.
  void restore(const ArrayArchive& archive);
  void load_checkpoint(const std::filesystem::path& path);

 private:
  std::vector<int> epoch_order(long epoch) const;

  TrainConfig config_;
  const Dataset& train_;
  Encoder<float> encoder_;
  AdamState<float> adam_;
  std::vector<nn::Param<float>*> params_;
  std::vector<nn::Buffer<float>*> buffers_;
  std::vector<int> frames_;
  long steps_per_epoch_ = 0;
  long total_steps_ = 0;
  long step_ = 0;
};

/// Encoder saved by a checkpoint (parameters and buffers only).
Encoder<float> load_encoder(const ArrayArchive& archive);
TrainConfig checkpoint_config(const ArrayArchive& archive);

std::string encoder_to_key_values(const EncoderConfig& config);
EncoderConfig encoder_from_key_values(const std::string& text);

}  // namespace teq
