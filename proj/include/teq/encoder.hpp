#pragma once

// Trainable networks: a reduced residual 3D CNN backbone whose globally
// pooled output is the representation, the two projection MLPs (relative
// transformation codes and instance codes) and the auxiliary heads.

#include <span>
#include <string>
#include <vector>

#include "teq/clipops.hpp"
#include "teq/nn.hpp"

namespace teq {

struct EncoderConfig {
  int clip_len = 16;
  int resolution = 32;
  int channels = 3;
  std::vector<int> widths{8, 32, 64, 128};   // one residual block per stage
  int dim = 128;                             // must equal widths.back()

  /// Total spatial / temporal downsampling of the backbone.
  int spatial_stride() const;
  int temporal_stride() const;
  void validate() const;
};

template <class T>
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const EncoderConfig& config);

  void init(Rng& rng);
  /// Feature volume before global pooling.
  nn::Volume<T> forward_features(const nn::Volume<T>& clips, bool training);
  /// (N, D) embeddings.
  nn::Matrix<T> forward(const nn::Volume<T>& clips, bool training);
  /// Back-propagates dL/dEmbedding; parameter gradients accumulate.
  void backward(const nn::Matrix<T>& d_embedding);
  void visit(const nn::ParamVisitor<T>& v);

 private:
  nn::Conv3d<T> stem_;
  nn::BatchNorm3d<T> stem_bn_;
  std::vector<nn::ResBlock<T>> stages_;
  nn::Volume<T> stem_out_;
  nn::Shape5 pooled_shape_;
};

/// Stacks clips (T, H, W, C) into a channel-first batch volume.
template <class T>
nn::Volume<T> clips_to_volume(std::span<const VideoTensor> clips);

template <class T>
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const EncoderConfig& config);

  void init(std::uint64_t seed);
  void visit(const nn::ParamVisitor<T>& v);
  void zero_grad();
  std::size_t parameter_count();

  const EncoderConfig& config() const { return config_; }

  /// Checks clip shape against the configuration, then runs the backbone.
  nn::Matrix<T> embed(std::span<const VideoTensor> clips, bool training);
  nn::Matrix<T> embed(const nn::Volume<T>& clips, bool training);

  /// Relative transformation code from ordered pairs: rows of [e_p ; e_q].
  nn::Matrix<T> psi_forward(const nn::Matrix<T>& e_p, const nn::Matrix<T>& e_q);
  nn::Matrix<T> phi_forward(const nn::Matrix<T>& e);
  nn::Matrix<T> head_speed(const nn::Matrix<T>& e);
  nn::Matrix<T> head_direction(const nn::Matrix<T>& e);
  nn::Matrix<T> head_overlap(const nn::Matrix<T>& e_p, const nn::Matrix<T>& e_q);

  Backbone<T> backbone;
  nn::Mlp<T> psi;
  nn::Mlp<T> phi;
  nn::Mlp<T> speed_head;
  nn::Mlp<T> direction_head;
  nn::Mlp<T> overlap_head;

 private:
  EncoderConfig config_;
};

/// Row-wise concatenation [a | b].
template <class T>
nn::Matrix<T> concat_columns(const nn::Matrix<T>& a, const nn::Matrix<T>& b);

}  // namespace teq
