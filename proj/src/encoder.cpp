#include "teq/encoder.hpp"

namespace teq {

int EncoderConfig::spatial_stride() const {
  return 2 << (static_cast<int>(widths.size()) - 1);
}

int EncoderConfig::temporal_stride() const {
  return 1 << (static_cast<int>(widths.size()) - 1);
}

void EncoderConfig::validate() const {
  if (widths.empty()) throw Error("encoder needs at least one stage");
  if (dim != widths.back()) throw Error("embedding dimension must equal the last stage width");
  if (channels != 1 && channels != 3) throw Error("encoder channels must be 1 or 3");
  if (clip_len < 1 || clip_len % temporal_stride() != 0) {
    throw Error("clip length incompatible with backbone downsampling");
  }
  if (resolution < 8 || resolution % spatial_stride() != 0) {
    throw Error("input resolution incompatible with backbone downsampling");
  }
}

// --------------------------------------------------------------- Backbone

template <class T>
Backbone<T>::Backbone(const EncoderConfig& config)
    : stem_("backbone.stem", config.channels, config.widths.front(), 3, 1, 2),
      stem_bn_("backbone.stem_bn", config.widths.front()) {
  int in = config.widths.front();
  for (std::size_t s = 0; s < config.widths.size(); ++s) {
    const int out = config.widths[s];
    stages_.emplace_back("backbone.stage" + std::to_string(s + 1), in, out, s == 0 ? 1 : 2);
    in = out;
  }
}

template <class T>
void Backbone<T>::init(Rng& rng) {
  stem_.init(rng);
  for (auto& b : stages_) b.init(rng);
}

template <class T>
nn::Volume<T> Backbone<T>::forward_features(const nn::Volume<T>& clips, bool training) {
  stem_out_ = stem_bn_.forward(stem_.forward(clips), training);
  nn::relu_inplace(stem_out_);
  nn::Volume<T> h = stages_.front().forward(stem_out_, training);
  for (std::size_t s = 1; s < stages_.size(); ++s) h = stages_[s].forward(h, training);
  return h;
}

template <class T>
nn::Matrix<T> Backbone<T>::forward(const nn::Volume<T>& clips, bool training) {
  nn::Volume<T> h = forward_features(clips, training);
  pooled_shape_ = h.shape;
  return nn::global_average_pool(h);
}

template <class T>
void Backbone<T>::backward(const nn::Matrix<T>& d_embedding) {
  nn::Volume<T> g = nn::global_average_pool_backward(d_embedding, pooled_shape_);
  for (std::size_t s = stages_.size(); s-- > 0;) g = stages_[s].backward(g);
  nn::relu_backward_inplace(g, stem_out_);
  stem_.backward(stem_bn_.backward(g));
}

template <class T>
void Backbone<T>::visit(const nn::ParamVisitor<T>& v) {
  stem_.visit(v);
  stem_bn_.visit(v);
  for (auto& b : stages_) b.visit(v);
}

template <class T>
nn::Volume<T> clips_to_volume(std::span<const VideoTensor> clips) {
  if (clips.empty()) throw Error("empty clip batch");
  const auto& f = clips.front();
  nn::Volume<T> v({static_cast<int>(clips.size()), f.channels, f.frames, f.height, f.width});
  const std::size_t S = v.shape.spatial();
  for (std::size_t n = 0; n < clips.size(); ++n) {
    const auto& c = clips[n];
    if (c.frames != f.frames || c.height != f.height || c.width != f.width ||
        c.channels != f.channels) {
      throw Error("clip shapes differ within a batch");
    }
    T* dst = v.sample(static_cast<int>(n));
    for (std::size_t p = 0; p < S; ++p)
      for (int ch = 0; ch < f.channels; ++ch)
        dst[ch * S + p] = static_cast<T>(c.data[p * f.channels + ch]);
  }
  return v;
}

// ---------------------------------------------------------------- Encoder

template <class T>
Encoder<T>::Encoder(const EncoderConfig& config)
    : backbone((config.validate(), config)),
      psi("psi", {2 * config.dim, 2 * config.dim, 2 * config.dim, config.dim}),
      phi("phi", {config.dim, config.dim, config.dim, config.dim}),
      speed_head("head_speed", {config.dim, config.dim, kNumSpeedClasses}),
      direction_head("head_direction", {config.dim, config.dim, 2}),
      overlap_head("head_overlap", {2 * config.dim, config.dim, kNumOverlapClasses}),
      config_(config) {}

template <class T>
void Encoder<T>::init(std::uint64_t seed) {
  Rng rng(seed);
  backbone.init(rng);
  psi.init(rng);
  phi.init(rng);
  speed_head.init(rng);
  direction_head.init(rng);
  overlap_head.init(rng);
}

template <class T>
void Encoder<T>::visit(const nn::ParamVisitor<T>& v) {
  backbone.visit(v);
  psi.visit(v);
  phi.visit(v);
  speed_head.visit(v);
  direction_head.visit(v);
  overlap_head.visit(v);
}

template <class T>
void Encoder<T>::zero_grad() {
  visit({[](nn::Param<T>& p) { p.zero_grad(); }, nullptr});
}

template <class T>
std::size_t Encoder<T>::parameter_count() {
  std::size_t n = 0;
  visit({[&](nn::Param<T>& p) { n += p.size(); }, nullptr});
  return n;
}

template <class T>
nn::Matrix<T> Encoder<T>::embed(std::span<const VideoTensor> clips, bool training) {
  for (const auto& c : clips) {
    if (c.frames != config_.clip_len || c.height != config_.resolution ||
        c.width != config_.resolution || c.channels != config_.channels) {
      throw Error("clip shape does not match encoder configuration");
    }
  }
  return backbone.forward(clips_to_volume<T>(clips), training);
}

template <class T>
nn::Matrix<T> Encoder<T>::embed(const nn::Volume<T>& clips, bool training) {
  const auto& s = clips.shape;
  if (s.c != config_.channels || s.t != config_.clip_len || s.h != config_.resolution ||
      s.w != config_.resolution) {
    throw Error("clip shape does not match encoder configuration");
  }
  return backbone.forward(clips, training);
}

template <class T>
nn::Matrix<T> concat_columns(const nn::Matrix<T>& a, const nn::Matrix<T>& b) {
  if (a.rows() != b.rows()) throw Error("row count mismatch in concatenation");
  nn::Matrix<T> out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

template <class T>
nn::Matrix<T> Encoder<T>::psi_forward(const nn::Matrix<T>& e_p, const nn::Matrix<T>& e_q) {
  return psi.forward(concat_columns(e_p, e_q));
}

template <class T>
nn::Matrix<T> Encoder<T>::phi_forward(const nn::Matrix<T>& e) {
  return phi.forward(e);
}

template <class T>
nn::Matrix<T> Encoder<T>::head_speed(const nn::Matrix<T>& e) {
  return speed_head.forward(e);
}

template <class T>
nn::Matrix<T> Encoder<T>::head_direction(const nn::Matrix<T>& e) {
  return direction_head.forward(e);
}

template <class T>
nn::Matrix<T> Encoder<T>::head_overlap(const nn::Matrix<T>& e_p, const nn::Matrix<T>& e_q) {
  return overlap_head.forward(concat_columns(e_p, e_q));
}

template class Backbone<float>;
template class Backbone<double>;
template class Encoder<float>;
template class Encoder<double>;
template nn::Volume<float> clips_to_volume<float>(std::span<const VideoTensor>);
template nn::Volume<double> clips_to_volume<double>(std::span<const VideoTensor>);
template nn::Matrix<float> concat_columns<float>(const nn::Matrix<float>&,
                                                 const nn::Matrix<float>&);
template nn::Matrix<double> concat_columns<double>(const nn::Matrix<double>&,
                                                   const nn::Matrix<double>&);

}  // namespace teq
