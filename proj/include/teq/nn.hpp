#pragma once

// Minimal layer substrate with explicit forward/backward passes.
//
// Feature volumes are stored channel-first (batch, channel, time, row, col).
// Every layer caches what its backward pass needs during forward, so a layer
// instance serves exactly one forward/backward pair at a time.

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "teq/common.hpp"

namespace teq::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;
// Aligned so vectorised reductions visit elements in the same order wherever
// the buffer was allocated.
template <class T>
using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;
  Storage<T> value;
  Storage<T> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s);
  std::size_t size() const { return value.size(); }
  void zero_grad();
};

/// Named non-trainable state (batch-norm running statistics).
template <class T>
struct Buffer {
  std::string name;
  Storage<T> value;
};

struct Shape5 {
  int n = 0, c = 0, t = 0, h = 0, w = 0;
  std::size_t spatial() const { return static_cast<std::size_t>(t) * h * w; }
  std::size_t per_sample() const { return spatial() * c; }
  std::size_t numel() const { return per_sample() * n; }
  bool operator==(const Shape5&) const = default;
};

template <class T>
struct Volume {
  Shape5 shape;
  Storage<T> data;

  Volume() = default;
  explicit Volume(Shape5 s) : shape(s), data(s.numel(), T(0)) {}
  T* sample(int i) { return data.data() + shape.per_sample() * i; }
  const T* sample(int i) const { return data.data() + shape.per_sample() * i; }
};

/// Visitor over trainable parameters and buffers, used by optimizers and
/// checkpointing.
template <class T>
struct ParamVisitor {
  std::function<void(Param<T>&)> param;
  std::function<void(Buffer<T>&)> buffer;
};

template <class T>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, int in_channels, int out_channels, int kernel, int time_stride,
         int space_stride);

  void init(Rng& rng);
  Shape5 output_shape(const Shape5& in) const;
  Volume<T> forward(const Volume<T>& x);
  Volume<T> backward(const Volume<T>& dy);
  void visit(const ParamVisitor<T>& v);

  Param<T> weight;  // (out, in * k^3)

 private:
  int in_ = 0, out_ = 0, k_ = 3, st_ = 1, ss_ = 1;
  Volume<T> input_;
};

template <class T>
class BatchNorm3d {
 public:
  BatchNorm3d() = default;
  BatchNorm3d(std::string name, int channels);

  Volume<T> forward(const Volume<T>& x, bool training);
  Volume<T> backward(const Volume<T>& dy);
  void visit(const ParamVisitor<T>& v);

  Param<T> gamma, beta;
  Buffer<T> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

 private:
  int c_ = 0;
  bool trained_pass_ = false;
  Storage<T> xhat_;
  Storage<T> inv_std_;
};

/// conv-bn-relu-conv-bn plus (projected) shortcut, then relu.
template <class T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int in_channels, int out_channels, int stride);

  void init(Rng& rng);
  Volume<T> forward(const Volume<T>& x, bool training);
  Volume<T> backward(const Volume<T>& dy);
  void visit(const ParamVisitor<T>& v);

 private:
  Conv3d<T> conv1_, conv2_, proj_;
  BatchNorm3d<T> bn1_, bn2_, proj_bn_;
  bool has_proj_ = false;
  Volume<T> mid_;  // relu output after bn1
  Volume<T> out_;  // block output (post relu)
};

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features);

  void init(Rng& rng);
  Matrix<T> forward(const Matrix<T>& x);
  Matrix<T> backward(const Matrix<T>& dy);
  void visit(const ParamVisitor<T>& v);

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  Param<T> weight;  // (out, in)
  Param<T> bias;

 private:
  int in_ = 0, out_ = 0;
  Matrix<T> input_;
};

/// Linear layers with ReLU between them (none after the last).
template <class T>
class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, hidden..., out}
  Mlp(const std::string& name, std::vector<int> widths);

  void init(Rng& rng);
  Matrix<T> forward(const Matrix<T>& x);
  Matrix<T> backward(const Matrix<T>& dy);
  void visit(const ParamVisitor<T>& v);

  std::vector<Linear<T>>& layers() { return layers_; }
  int in_features() const { return layers_.front().in_features(); }
  int out_features() const { return layers_.back().out_features(); }

 private:
  std::vector<Linear<T>> layers_;
  std::vector<Matrix<T>> activations_;  // post-relu outputs of hidden layers
};

/// Mean over all spatiotemporal positions: (N, C, ...) -> (N, C).
template <class T>
Matrix<T> global_average_pool(const Volume<T>& x);
template <class T>
Volume<T> global_average_pool_backward(const Matrix<T>& dy, const Shape5& input_shape);

template <class T>
void relu_inplace(Volume<T>& x);
/// Zeroes dy wherever the relu output y was zero.
template <class T>
void relu_backward_inplace(Volume<T>& dy, const Volume<T>& y);

/// Row-wise softmax.
template <class T>
Matrix<T> softmax_rows(const Matrix<T>& logits);

}  // namespace teq::nn
