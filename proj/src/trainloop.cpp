#include "teq/trainloop.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace teq {

// ------------------------------------------------------------- planning

CoupleDescriptor couple_descriptor(const Couple& c, const TrainConfig& config) {
  CoupleDescriptor d;
  if (config.equivariant_temporal || !config.equivariant_spatial) {
    d.temporal = relative_descriptor(c.tau_p, c.tau_q);
  }
  if (config.equivariant_spatial) {
    d.spatial = SpatialRelative{c.sigma[1].top - c.sigma[0].top, c.sigma[1].left - c.sigma[0].left,
                                {c.sigma[0].horizontal_flip, c.sigma[1].horizontal_flip}};
  }
  return d;
}

namespace {

// Same crop and flip, freshly drawn colour.
SpatialAugmentation with_geometry_of(const SpatialAugmentation& geometry,
                                     const SpatialAugmentation& colour) {
  SpatialAugmentation s = geometry;
  s.brightness_shift = colour.brightness_shift;
  s.contrast_scale = colour.contrast_scale;
  return s;
}

Couple sample_couple(Rng& rng, int i, int j, int len, int height, int width,
                     const TrainConfig& config) {
  const int clip_len = config.encoder.clip_len;
  Couple c;
  c.video_i = i;
  c.video_j = j;
  c.tau_p = sample_temporal_transform(rng, len, clip_len, config.temporal);
  // spatial-only equivariance holds the temporal crop fixed within the pair
  c.tau_q = (config.equivariant_spatial && !config.equivariant_temporal)
                ? c.tau_p
                : sample_temporal_transform(rng, len, clip_len, config.temporal);
  for (auto& s : c.sigma) s = sample_spatial_augmentation(rng, height, width, config.spatial);
  if (config.equivariant_spatial) {
    c.sigma[2] = with_geometry_of(c.sigma[0], c.sigma[2]);
    c.sigma[3] = with_geometry_of(c.sigma[1], c.sigma[3]);
  }
  return c;
}

}  // namespace

BatchPlan plan_batch(Rng& rng, std::span<const int> videos, std::span<const int> video_frames,
                     int frame_height, int frame_width, const TrainConfig& config) {
  if (videos.size() < 4 || videos.size() % 2 != 0) {
    throw Error("batch must hold an even number (>= 4) of videos");
  }
  std::vector<int> order(videos.begin(), videos.end());
  std::shuffle(order.begin(), order.end(), rng);

  BatchPlan plan;
  std::set<CoupleDescriptor> seen;
  for (std::size_t k = 0; k + 1 < order.size(); k += 2) {
    const int i = order[k], j = order[k + 1];
    if (i < 0 || j < 0 || static_cast<std::size_t>(std::max(i, j)) >= video_frames.size()) {
      throw Error("video index out of range");
    }
    const int len = std::min(video_frames[i], video_frames[j]);
    Couple c;
    for (int attempt = 0;; ++attempt) {
      c = sample_couple(rng, i, j, len, frame_height, frame_width, config);
      const auto d = couple_descriptor(c, config);
      if (seen.insert(d).second) break;
      if (attempt >= config.collision_retries) {
        ++plan.collisions;
        break;
      }
    }
    plan.couples.push_back(c);
  }
  return plan;
}

std::vector<VideoTensor> materialize_clips(const BatchPlan& plan, const Dataset& data,
                                           const TrainConfig& config, Rng& rng) {
  const int clip_len = config.encoder.clip_len;
  const int res = config.encoder.resolution;
  std::vector<VideoTensor> clips;
  auto add = [&](int video, const TemporalTransform& tau, const SpatialAugmentation& sigma) {
    clips.push_back(apply_spatial(apply_temporal(data.videos.at(video), tau, clip_len), sigma, res));
  };
  for (const auto& c : plan.couples) {
    if (!config.distinctiveness) {
      add(c.video_i, c.tau_p, c.sigma[0]);
      add(c.video_i, c.tau_q, c.sigma[1]);
      add(c.video_j, c.tau_p, c.sigma[2]);
      add(c.video_j, c.tau_q, c.sigma[3]);
      continue;
    }
    const std::array<int, 2> vids{c.video_i, c.video_j};
    for (int m = 0; m < 2; ++m)
      for (int crop = 0; crop < 2; ++crop) {
        const auto& tau = crop == 0 ? c.tau_p : c.tau_q;
        add(vids[m], tau, c.sigma[2 * m + crop]);
        add(vids[m], tau,
            sample_spatial_augmentation(rng, data.height, data.width, config.spatial));
      }
  }
  return clips;
}

double learning_rate(const TrainConfig& config, long step, long total_steps) {
  if (total_steps <= 1) return config.base_lr;
  const long warmup = std::max<long>(1, std::lround(config.warmup_fraction * total_steps));
  if (step < warmup) return config.base_lr * static_cast<double>(step) / warmup;
  const long decay = std::max<long>(1, total_steps - 1 - warmup);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / decay);
  return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ----------------------------------------------------------- objectives

template <class T>
LossBreakdown compute_losses(Encoder<T>& enc, const BatchPlan& plan,
                             const std::vector<VideoTensor>& clips, const TrainConfig& config,
                             bool backward, const nn::Matrix<T>* frozen_psi,
                             const nn::Matrix<T>* frozen_phi, nn::Matrix<T>* psi_out,
                             nn::Matrix<T>* phi_out) {
  const std::size_t couples = plan.couples.size();
  const std::size_t per_couple = config.distinctiveness ? 8 : 4;
  if (clips.size() != couples * per_couple) throw Error("clip count does not match plan");

  const nn::Matrix<T> emb = enc.embed(std::span<const VideoTensor>(clips), true);
  nn::Matrix<T> d_emb = nn::Matrix<T>::Zero(emb.rows(), emb.cols());
  const auto rows = static_cast<std::size_t>(emb.rows());
  const LossWeights& w = config.weights;
  const T lambda = static_cast<T>(config.temperature);
  LossBreakdown parts;

  // per-clip temporal transform
  std::vector<TemporalTransform> clip_tau(rows);
  for (std::size_t c = 0; c < couples; ++c) {
    const auto& cp = plan.couples[c];
    for (std::size_t k = 0; k < per_couple; ++k) {
      const bool is_q = config.distinctiveness ? (k / 2) % 2 == 1 : k % 2 == 1;
      clip_tau[c * per_couple + k] = is_q ? cp.tau_q : cp.tau_p;
    }
  }

  // instance codes: consecutive clip rows share an instance
  if (w.inst > 0.0) {
    std::vector<int> ids(rows);
    for (std::size_t r = 0; r < rows; ++r) ids[r] = static_cast<int>(r / 2);
    nn::Matrix<T> codes = enc.phi_forward(emb);
    auto res = instance_loss<T>(codes, ids, lambda, frozen_phi);
    parts.inst = res.loss;
    if (phi_out) *phi_out = codes;
    if (backward) d_emb += enc.phi.backward(res.grad * static_cast<T>(w.inst));
  }

  // clip-level auxiliary heads
  const bool speed_on = config.aux_speed && w.aux_speed > 0.0;
  const bool dir_on = config.aux_direction && w.aux_direction > 0.0;
  if (speed_on) {
    std::vector<int> labels(rows);
    for (std::size_t r = 0; r < rows; ++r) labels[r] = clip_tau[r].speed_exponent;
    const auto logits = enc.head_speed(emb);
    auto res = cross_entropy<T>(logits, labels);
    parts.aux_speed = res.loss;
    if (backward) d_emb += enc.speed_head.backward(res.grad * static_cast<T>(w.aux_speed));
  }
  if (dir_on) {
    std::vector<int> labels(rows);
    for (std::size_t r = 0; r < rows; ++r) labels[r] = static_cast<int>(clip_tau[r].direction);
    const auto logits = enc.head_direction(emb);
    auto res = cross_entropy<T>(logits, labels);
    parts.aux_direction = res.loss;
    if (backward) d_emb += enc.direction_head.backward(res.grad * static_cast<T>(w.aux_direction));
  }

  const bool equi_on = w.equi > 0.0 && !config.distinctiveness;
  const bool overlap_on = config.aux_overlap && w.aux_overlap > 0.0 && !config.distinctiveness;
  if (equi_on || overlap_on) {
    // video m of the batch owns clip rows 2m (p) and 2m + 1 (q)
    const auto videos = static_cast<Eigen::Index>(rows / 2);
    nn::Matrix<T> e_p(videos, emb.cols()), e_q(videos, emb.cols());
    for (Eigen::Index m = 0; m < videos; ++m) {
      e_p.row(m) = emb.row(2 * m);
      e_q.row(m) = emb.row(2 * m + 1);
    }
    nn::Matrix<T> d_pair = nn::Matrix<T>::Zero(videos, 2 * emb.cols());
    if (equi_on) {
      std::vector<int> ids(videos);
      for (Eigen::Index m = 0; m < videos; ++m) ids[m] = static_cast<int>(m / 2);
      nn::Matrix<T> codes = enc.psi_forward(e_p, e_q);
      auto res = equivariance_loss<T>(codes, ids, lambda, frozen_psi);
      parts.equi = res.loss;
      if (psi_out) *psi_out = codes;
      if (backward) d_pair += enc.psi.backward(res.grad * static_cast<T>(w.equi));
    }
    if (overlap_on) {
      std::vector<int> labels(videos);
      for (Eigen::Index m = 0; m < videos; ++m) {
        const auto& cp = plan.couples[m / 2];
        labels[m] = static_cast<int>(overlap_order_label(cp.tau_p, cp.tau_q, config.encoder.clip_len));
      }
      const auto logits = enc.head_overlap(e_p, e_q);
      auto res = cross_entropy<T>(logits, labels);
      parts.aux_overlap = res.loss;
      if (backward) d_pair += enc.overlap_head.backward(res.grad * static_cast<T>(w.aux_overlap));
    }
    if (backward) {
      const auto D = emb.cols();
      for (Eigen::Index m = 0; m < videos; ++m) {
        d_emb.row(2 * m) += d_pair.row(m).head(D);
        d_emb.row(2 * m + 1) += d_pair.row(m).tail(D);
      }
    }
  }

  if (backward) enc.backbone.backward(d_emb);
  return total_loss(w, parts);
}

template LossBreakdown compute_losses<float>(Encoder<float>&, const BatchPlan&,
                                             const std::vector<VideoTensor>&, const TrainConfig&,
                                             bool, const nn::Matrix<float>*,
                                             const nn::Matrix<float>*, nn::Matrix<float>*,
                                             nn::Matrix<float>*);
template LossBreakdown compute_losses<double>(Encoder<double>&, const BatchPlan&,
                                              const std::vector<VideoTensor>&, const TrainConfig&,
                                              bool, const nn::Matrix<double>*,
                                              const nn::Matrix<double>*, nn::Matrix<double>*,
                                              nn::Matrix<double>*);

// --------------------------------------------------------------- Trainer

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kOrderStream = 0x0de5;
constexpr std::uint64_t kPlanStream = 0x91a7;
constexpr std::uint64_t kClipStream = 0xc119;

std::string describe_plan(const BatchPlan& plan, const LossBreakdown& l, long step) {
  std::ostringstream o;
  o << "step " << step << " loss equi=" << l.equi << " inst=" << l.inst
    << " speed=" << l.aux_speed << " direction=" << l.aux_direction
    << " overlap=" << l.aux_overlap << "\n";
  for (const auto& c : plan.couples) {
    o << "couple videos (" << c.video_i << ", " << c.video_j << ") tau_p=(" << c.tau_p.speed_exponent
      << "," << to_string(c.tau_p.direction) << "," << c.tau_p.start_frame << ") tau_q=("
      << c.tau_q.speed_exponent << "," << to_string(c.tau_q.direction) << ","
      << c.tau_q.start_frame << ")\n";
  }
  return o.str();
}

}  // namespace

Trainer::Trainer(TrainConfig config, const Dataset& train)
    : config_(std::move(config)), train_(train), encoder_(config_.encoder) {
  config_.validate();
  if (train_.size() < static_cast<std::size_t>(config_.batch_size)) {
    throw Error("dataset smaller than one batch");
  }
  if (train_.channels != config_.encoder.channels) {
    throw Error("dataset channels do not match encoder configuration");
  }
  if (feasible_speeds(config_.temporal, train_.frames, config_.encoder.clip_len).empty()) {
    throw Error("video too short");
  }
  encoder_.init(derive_seed(config_.seed, kInitStream));
  encoder_.visit({[&](nn::Param<float>& p) { params_.push_back(&p); },
                  [&](nn::Buffer<float>& b) { buffers_.push_back(&b); }});
  for (auto* p : params_) {
    adam_.m.emplace_back(p->size(), 0.0f);
    adam_.v.emplace_back(p->size(), 0.0f);
  }
  frames_.assign(train_.size(), train_.frames);
  steps_per_epoch_ = static_cast<long>(train_.size()) / config_.batch_size;
  total_steps_ = config_.max_steps > 0 ? config_.max_steps : steps_per_epoch_ * config_.epochs;
}

std::vector<int> Trainer::epoch_order(long epoch) const {
  std::vector<int> order(train_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(derive_seed(config_.seed, kOrderStream), static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

BatchPlan Trainer::plan_for_step(long step) const {
  const long epoch = step / steps_per_epoch_;
  const long pos = step % steps_per_epoch_;
  const auto order = epoch_order(epoch);
  std::span<const int> batch(order.data() + pos * config_.batch_size,
                             static_cast<std::size_t>(config_.batch_size));
  Rng rng(derive_seed(derive_seed(config_.seed, kPlanStream), static_cast<std::uint64_t>(step)));
  return plan_batch(rng, batch, frames_, train_.height, train_.width, config_);
}

std::vector<VideoTensor> Trainer::clips_for_step(long step, const BatchPlan& plan) const {
  Rng rng(derive_seed(derive_seed(config_.seed, kClipStream), static_cast<std::uint64_t>(step)));
  return materialize_clips(plan, train_, config_, rng);
}

StepRecord Trainer::train_step() {
  const BatchPlan plan = plan_for_step(step_);
  return train_step(plan, clips_for_step(step_, plan));
}

StepRecord Trainer::train_step(const BatchPlan& plan, const std::vector<VideoTensor>& clips) {
  encoder_.zero_grad();
  StepRecord rec;
  rec.step = step_;
  rec.loss = compute_losses<float>(encoder_, plan, clips, config_, true);
  const auto& l = rec.loss;
  for (double v : {l.equi, l.inst, l.aux_speed, l.aux_direction, l.aux_overlap, l.total}) {
    if (!std::isfinite(v)) {
      throw TrainingDiverged("non-finite loss at step " + std::to_string(step_),
                             describe_plan(plan, l, step_));
    }
  }

  double sq = 0.0;
  for (auto* p : params_)
    for (float g : p->grad) sq += static_cast<double>(g) * g;
  rec.grad_norm = std::sqrt(sq);
  if (!std::isfinite(rec.grad_norm)) {
    throw TrainingDiverged("non-finite gradient at step " + std::to_string(step_),
                           describe_plan(plan, l, step_));
  }
  const float clip = (config_.grad_clip > 0.0 && rec.grad_norm > config_.grad_clip)
                         ? static_cast<float>(config_.grad_clip / rec.grad_norm)
                         : 1.0f;

  // AdamW with decoupled weight decay
  rec.lr = learning_rate(config_, step_, total_steps_);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double t = static_cast<double>(step_ + 1);
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  const float lr = static_cast<float>(rec.lr);
  const float wd = static_cast<float>(config_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    auto& m = adam_.m[k];
    auto& v = adam_.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float g = p.grad[i] * clip;
      m[i] = static_cast<float>(b1) * m[i] + static_cast<float>(1 - b1) * g;
      v[i] = static_cast<float>(b2) * v[i] + static_cast<float>(1 - b2) * g * g;
      const float mhat = m[i] / static_cast<float>(c1);
      const float vhat = v[i] / static_cast<float>(c2);
      p.value[i] -= lr * (mhat / (std::sqrt(vhat) + static_cast<float>(eps)) + wd * p.value[i]);
    }
  }
  ++step_;
  return rec;
}

ArrayArchive Trainer::checkpoint() const {
  ArrayArchive a;
  a.put_scalar("meta/step", step_);
  a.put_string("meta/train_config", to_key_values(config_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& p = *params_[k];
    std::vector<std::uint64_t> shape(p.shape.begin(), p.shape.end());
    a.put("param/" + p.name, std::span<const float>(p.value), shape);
    a.put("adam_m/" + p.name, std::span<const float>(adam_.m[k]), shape);
    a.put("adam_v/" + p.name, std::span<const float>(adam_.v[k]), shape);
  }
  for (const auto* b : buffers_) a.put("buffer/" + b->name, std::span<const float>(b->value));
  return a;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const { checkpoint().save(path); }

namespace {

// Copies in place so the destination keeps its aligned allocation.
void assign(nn::Storage<float>& dst, const std::vector<float>& src, const std::string& name) {
  if (src.size() != dst.size()) throw Error("checkpoint entry '" + name + "' has wrong size");
  std::copy(src.begin(), src.end(), dst.begin());
}

}  // namespace

void Trainer::restore(const ArrayArchive& a) {
  const TrainConfig saved = checkpoint_config(a);
  if (encoder_to_key_values(saved.encoder) != encoder_to_key_values(config_.encoder)) {
    throw Error("checkpoint encoder configuration differs from the run configuration");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    assign(p.value, a.get_f32("param/" + p.name), p.name);
    assign(adam_.m[k], a.get_f32("adam_m/" + p.name), p.name);
    assign(adam_.v[k], a.get_f32("adam_v/" + p.name), p.name);
  }
  for (auto* b : buffers_) assign(b->value, a.get_f32("buffer/" + b->name), b->name);
  step_ = static_cast<long>(a.get_scalar("meta/step"));
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  restore(ArrayArchive::load(path));
}

TrainConfig checkpoint_config(const ArrayArchive& a) {
  return apply_key_values(TrainConfig{}, a.get_string("meta/train_config"));
}

Encoder<float> load_encoder(const ArrayArchive& a) {
  const TrainConfig config = checkpoint_config(a);
  Encoder<float> enc(config.encoder);
  enc.visit({[&](nn::Param<float>& p) { assign(p.value, a.get_f32("param/" + p.name), p.name); },
             [&](nn::Buffer<float>& b) { assign(b.value, a.get_f32("buffer/" + b.name), b.name); }});
  return enc;
}

}  // namespace teq
