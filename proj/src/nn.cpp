#include "teq/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace teq::nn {

template <class T>
Param<T>::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (int d : shape) count *= static_cast<std::size_t>(d);
  value.assign(count, T(0));
  grad.assign(count, T(0));
}

template <class T>
void Param<T>::zero_grad() {
  std::fill(grad.begin(), grad.end(), T(0));
}

namespace {

template <class T>
void kaiming_normal(Storage<T>& w, int fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : w) v = static_cast<T>(dist(rng));
}

int conv_out(int in, int k, int stride) {
  const int pad = k / 2;
  return (in + 2 * pad - k) / stride + 1;
}

// Output columns [lo, hi) whose input column ow * ss - pad + kw lies inside [0, w).
inline void valid_range(int out_w, int in_w, int ss, int offset, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + ss - 1) / ss;
  hi = in_w - 1 - offset < 0 ? 0 : std::min(out_w, (in_w - 1 - offset) / ss + 1);
  if (hi < lo) hi = lo;
}

// col has (C * k^3) rows and (To * Ho * Wo) columns.
template <class T>
void im2col(const T* x, const Shape5& in, const Shape5& out, int k, int st, int ss, T* col) {
  const int pad = k / 2;
  const std::size_t P = out.spatial();
  for (int c = 0; c < in.c; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * in.spatial();
    for (int kt = 0; kt < k; ++kt)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          T* row = col + (((static_cast<std::size_t>(c) * k + kt) * k + kh) * k + kw) * P;
          int lo, hi;
          valid_range(out.w, in.w, ss, kw - pad, lo, hi);
          for (int ot = 0; ot < out.t; ++ot) {
            const int it = ot * st - pad + kt;
            T* rt = row + static_cast<std::size_t>(ot) * out.h * out.w;
            if (it < 0 || it >= in.t) {
              std::fill_n(rt, static_cast<std::size_t>(out.h) * out.w, T(0));
              continue;
            }
            for (int oh = 0; oh < out.h; ++oh) {
              const int ih = oh * ss - pad + kh;
              T* rh = rt + static_cast<std::size_t>(oh) * out.w;
              if (ih < 0 || ih >= in.h) {
                std::fill_n(rh, out.w, T(0));
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(it) * in.h + ih) * in.w + (kw - pad);
              std::fill_n(rh, lo, T(0));
              if (ss == 1) {
                std::copy(src + lo, src + hi, rh + lo);
              } else {
                for (int ow = lo; ow < hi; ++ow) rh[ow] = src[ow * ss];
              }
              std::fill(rh + hi, rh + out.w, T(0));
            }
          }
        }
  }
}

template <class T>
void col2im(const T* col, const Shape5& in, const Shape5& out, int k, int st, int ss, T* dx) {
  const int pad = k / 2;
  const std::size_t P = out.spatial();
  for (int c = 0; c < in.c; ++c) {
    T* dc = dx + static_cast<std::size_t>(c) * in.spatial();
    for (int kt = 0; kt < k; ++kt)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          const T* row = col + (((static_cast<std::size_t>(c) * k + kt) * k + kh) * k + kw) * P;
          int lo, hi;
          valid_range(out.w, in.w, ss, kw - pad, lo, hi);
          for (int ot = 0; ot < out.t; ++ot) {
            const int it = ot * st - pad + kt;
            if (it < 0 || it >= in.t) continue;
            const T* rt = row + static_cast<std::size_t>(ot) * out.h * out.w;
            for (int oh = 0; oh < out.h; ++oh) {
              const int ih = oh * ss - pad + kh;
              if (ih < 0 || ih >= in.h) continue;
              const T* rh = rt + static_cast<std::size_t>(oh) * out.w;
              T* dst = dc + (static_cast<std::size_t>(it) * in.h + ih) * in.w + (kw - pad);
              if (ss == 1) {
                for (int ow = lo; ow < hi; ++ow) dst[ow] += rh[ow];
              } else {
                for (int ow = lo; ow < hi; ++ow) dst[ow * ss] += rh[ow];
              }
            }
          }
        }
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv3d

template <class T>
Conv3d<T>::Conv3d(std::string name, int in_channels, int out_channels, int kernel,
                  int time_stride, int space_stride)
    : weight(std::move(name), {out_channels, in_channels * kernel * kernel * kernel}),
      in_(in_channels), out_(out_channels), k_(kernel), st_(time_stride), ss_(space_stride) {}

template <class T>
void Conv3d<T>::init(Rng& rng) {
  kaiming_normal(weight.value, in_ * k_ * k_ * k_, rng);
}

template <class T>
Shape5 Conv3d<T>::output_shape(const Shape5& in) const {
  return {in.n, out_, conv_out(in.t, k_, st_), conv_out(in.h, k_, ss_), conv_out(in.w, k_, ss_)};
}

template <class T>
Volume<T> Conv3d<T>::forward(const Volume<T>& x) {
  if (x.shape.c != in_) throw Error("conv input channel mismatch in " + weight.name);
  input_ = x;
  const Shape5 os = output_shape(x.shape);
  Volume<T> y(os);
  const int K = in_ * k_ * k_ * k_;
  const auto P = static_cast<Eigen::Index>(os.spatial());
  Storage<T> col(static_cast<std::size_t>(K) * P);
  ConstMatrixMap<T> w(weight.value.data(), out_, K);
  for (int n = 0; n < x.shape.n; ++n) {
    im2col(x.sample(n), x.shape, os, k_, st_, ss_, col.data());
    MatrixMap<T>(y.sample(n), out_, P).noalias() = w * ConstMatrixMap<T>(col.data(), K, P);
  }
  return y;
}

template <class T>
Volume<T> Conv3d<T>::backward(const Volume<T>& dy) {
  const Shape5& is = input_.shape;
  const Shape5 os = output_shape(is);
  if (!(dy.shape == os)) throw Error("conv gradient shape mismatch in " + weight.name);
  Volume<T> dx(is);
  const int K = in_ * k_ * k_ * k_;
  const auto P = static_cast<Eigen::Index>(os.spatial());
  Storage<T> col(static_cast<std::size_t>(K) * P);
  ConstMatrixMap<T> w(weight.value.data(), out_, K);
  MatrixMap<T> dw(weight.grad.data(), out_, K);
  for (int n = 0; n < is.n; ++n) {
    ConstMatrixMap<T> g(dy.sample(n), out_, P);
    im2col(input_.sample(n), is, os, k_, st_, ss_, col.data());
    dw.noalias() += g * ConstMatrixMap<T>(col.data(), K, P).transpose();
    MatrixMap<T>(col.data(), K, P).noalias() = w.transpose() * g;
    col2im(col.data(), is, os, k_, st_, ss_, dx.sample(n));
  }
  return dx;
}

template <class T>
void Conv3d<T>::visit(const ParamVisitor<T>& v) {
  if (v.param) v.param(weight);
}

// ----------------------------------------------------------- BatchNorm3d

template <class T>
BatchNorm3d<T>::BatchNorm3d(std::string name, int channels)
    : gamma(name + ".gamma", {channels}), beta(name + ".beta", {channels}),
      running_mean{name + ".running_mean", Storage<T>(channels, T(0))},
      running_var{name + ".running_var", Storage<T>(channels, T(1))}, c_(channels) {
  std::fill(gamma.value.begin(), gamma.value.end(), T(1));
}

template <class T>
Volume<T> BatchNorm3d<T>::forward(const Volume<T>& x, bool training) {
  if (x.shape.c != c_) throw Error("batch norm channel mismatch in " + gamma.name);
  Volume<T> y(x.shape);
  const std::size_t S = x.shape.spatial();
  const std::size_t M = S * x.shape.n;
  inv_std_.assign(c_, T(0));
  trained_pass_ = training;
  if (training) xhat_.assign(x.data.size(), T(0));
  for (int c = 0; c < c_; ++c) {
    T mean, var;
    if (training) {
      double sum = 0.0, sq = 0.0;
      for (int n = 0; n < x.shape.n; ++n) {
        const T* p = x.sample(n) + c * S;
        for (std::size_t i = 0; i < S; ++i) sum += p[i];
      }
      mean = static_cast<T>(sum / M);
      for (int n = 0; n < x.shape.n; ++n) {
        const T* p = x.sample(n) + c * S;
        for (std::size_t i = 0; i < S; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = static_cast<T>(sq / M);
      const T unbiased = M > 1 ? static_cast<T>(sq / (M - 1)) : var;
      running_mean.value[c] = (1 - momentum) * running_mean.value[c] + momentum * mean;
      running_var.value[c] = (1 - momentum) * running_var.value[c] + momentum * unbiased;
    } else {
      mean = running_mean.value[c];
      var = running_var.value[c];
    }
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std_[c] = inv;
    const T g = gamma.value[c], b = beta.value[c];
    for (int n = 0; n < x.shape.n; ++n) {
      const std::size_t off = x.shape.per_sample() * n + c * S;
      const T* p = x.data.data() + off;
      T* q = y.data.data() + off;
      for (std::size_t i = 0; i < S; ++i) {
        const T xh = (p[i] - mean) * inv;
        if (training) xhat_[off + i] = xh;
        q[i] = g * xh + b;
      }
    }
  }
  return y;
}

template <class T>
Volume<T> BatchNorm3d<T>::backward(const Volume<T>& dy) {
  Volume<T> dx(dy.shape);
  const std::size_t S = dy.shape.spatial();
  const double M = static_cast<double>(S * dy.shape.n);
  for (int c = 0; c < c_; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    if (trained_pass_) {
      for (int n = 0; n < dy.shape.n; ++n) {
        const std::size_t off = dy.shape.per_sample() * n + c * S;
        for (std::size_t i = 0; i < S; ++i) {
          sum_dy += dy.data[off + i];
          sum_dy_xh += static_cast<double>(dy.data[off + i]) * xhat_[off + i];
        }
      }
      gamma.grad[c] += static_cast<T>(sum_dy_xh);
      beta.grad[c] += static_cast<T>(sum_dy);
      const T g = gamma.value[c], inv = inv_std_[c];
      const T mean_dy = static_cast<T>(sum_dy / M);
      const T mean_dy_xh = static_cast<T>(sum_dy_xh / M);
      for (int n = 0; n < dy.shape.n; ++n) {
        const std::size_t off = dy.shape.per_sample() * n + c * S;
        for (std::size_t i = 0; i < S; ++i) {
          dx.data[off + i] = g * inv * (dy.data[off + i] - mean_dy - xhat_[off + i] * mean_dy_xh);
        }
      }
    } else {
      const T scale = gamma.value[c] * inv_std_[c];
      for (int n = 0; n < dy.shape.n; ++n) {
        const std::size_t off = dy.shape.per_sample() * n + c * S;
        for (std::size_t i = 0; i < S; ++i) dx.data[off + i] = dy.data[off + i] * scale;
      }
    }
  }
  return dx;
}

template <class T>
void BatchNorm3d<T>::visit(const ParamVisitor<T>& v) {
  if (v.param) {
    v.param(gamma);
    v.param(beta);
  }
  if (v.buffer) {
    v.buffer(running_mean);
    v.buffer(running_var);
  }
}

// -------------------------------------------------------------- activations

template <class T>
void relu_inplace(Volume<T>& x) {
  // NaN passes through so divergence stays visible downstream
  for (auto& v : x.data) v = v < T(0) ? T(0) : v;
}

template <class T>
void relu_backward_inplace(Volume<T>& dy, const Volume<T>& y) {
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    if (!(y.data[i] > T(0))) dy.data[i] = T(0);
}

// --------------------------------------------------------------- ResBlock

template <class T>
ResBlock<T>::ResBlock(const std::string& name, int in_channels, int out_channels, int stride)
    : conv1_(name + ".conv1", in_channels, out_channels, 3, stride, stride),
      conv2_(name + ".conv2", out_channels, out_channels, 3, 1, 1),
      bn1_(name + ".bn1", out_channels), bn2_(name + ".bn2", out_channels),
      has_proj_(stride != 1 || in_channels != out_channels) {
  if (has_proj_) {
    proj_ = Conv3d<T>(name + ".proj", in_channels, out_channels, 1, stride, stride);
    proj_bn_ = BatchNorm3d<T>(name + ".proj_bn", out_channels);
  }
}

template <class T>
void ResBlock<T>::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  if (has_proj_) proj_.init(rng);
}

template <class T>
Volume<T> ResBlock<T>::forward(const Volume<T>& x, bool training) {
  mid_ = bn1_.forward(conv1_.forward(x), training);
  relu_inplace(mid_);
  out_ = bn2_.forward(conv2_.forward(mid_), training);
  if (has_proj_) {
    const Volume<T> s = proj_bn_.forward(proj_.forward(x), training);
    for (std::size_t i = 0; i < out_.data.size(); ++i) out_.data[i] += s.data[i];
  } else {
    for (std::size_t i = 0; i < out_.data.size(); ++i) out_.data[i] += x.data[i];
  }
  relu_inplace(out_);
  return out_;
}

template <class T>
Volume<T> ResBlock<T>::backward(const Volume<T>& dy) {
  Volume<T> g = dy;
  relu_backward_inplace(g, out_);
  Volume<T> dmid = conv2_.backward(bn2_.backward(g));
  relu_backward_inplace(dmid, mid_);
  Volume<T> dx = conv1_.backward(bn1_.backward(dmid));
  if (has_proj_) {
    const Volume<T> ds = proj_.backward(proj_bn_.backward(g));
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
  } else {
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += g.data[i];
  }
  return dx;
}

template <class T>
void ResBlock<T>::visit(const ParamVisitor<T>& v) {
  conv1_.visit(v);
  bn1_.visit(v);
  conv2_.visit(v);
  bn2_.visit(v);
  if (has_proj_) {
    proj_.visit(v);
    proj_bn_.visit(v);
  }
}

// ----------------------------------------------------------------- Linear

template <class T>
Linear<T>::Linear(std::string name, int in_features, int out_features)
    : weight(name + ".weight", {out_features, in_features}), bias(name + ".bias", {out_features}),
      in_(in_features), out_(out_features) {}

template <class T>
void Linear<T>::init(Rng& rng) {
  kaiming_normal(weight.value, in_, rng);
  std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <class T>
Matrix<T> Linear<T>::forward(const Matrix<T>& x) {
  if (x.cols() != in_) throw Error("linear input width mismatch in " + weight.name);
  input_ = x;
  ConstMatrixMap<T> w(weight.value.data(), out_, in_);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.value.data(), out_);
  Matrix<T> y = x * w.transpose();
  y.rowwise() += b;
  return y;
}

template <class T>
Matrix<T> Linear<T>::backward(const Matrix<T>& dy) {
  MatrixMap<T> dw(weight.grad.data(), out_, in_);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(bias.grad.data(), out_);
  dw.noalias() += dy.transpose() * input_;
  db += dy.colwise().sum();
  ConstMatrixMap<T> w(weight.value.data(), out_, in_);
  return dy * w;
}

template <class T>
void Linear<T>::visit(const ParamVisitor<T>& v) {
  if (v.param) {
    v.param(weight);
    v.param(bias);
  }
}

// -------------------------------------------------------------------- Mlp

template <class T>
Mlp<T>::Mlp(const std::string& name, std::vector<int> widths) {
  if (widths.size() < 2) throw Error("mlp needs at least one layer");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.emplace_back(name + ".fc" + std::to_string(i), widths[i], widths[i + 1]);
  }
}

template <class T>
void Mlp<T>::init(Rng& rng) {
  for (auto& l : layers_) l.init(rng);
}

template <class T>
Matrix<T> Mlp<T>::forward(const Matrix<T>& x) {
  activations_.clear();
  Matrix<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) {
      h = h.unaryExpr([](T v) { return v < T(0) ? T(0) : v; });
      activations_.push_back(h);
    }
  }
  return h;
}

template <class T>
Matrix<T> Mlp<T>::backward(const Matrix<T>& dy) {
  Matrix<T> g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (i + 1 < layers_.size()) {
      g = (activations_[i].array() > T(0)).select(g, T(0));
    }
    g = layers_[i].backward(g);
  }
  return g;
}

template <class T>
void Mlp<T>::visit(const ParamVisitor<T>& v) {
  for (auto& l : layers_) l.visit(v);
}

// ------------------------------------------------------------------ pool

template <class T>
Matrix<T> global_average_pool(const Volume<T>& x) {
  Matrix<T> out(x.shape.n, x.shape.c);
  const std::size_t S = x.shape.spatial();
  for (int n = 0; n < x.shape.n; ++n)
    for (int c = 0; c < x.shape.c; ++c) {
      const T* p = x.sample(n) + c * S;
      double s = 0.0;
      for (std::size_t i = 0; i < S; ++i) s += p[i];
      out(n, c) = static_cast<T>(s / S);
    }
  return out;
}

template <class T>
Volume<T> global_average_pool_backward(const Matrix<T>& dy, const Shape5& input_shape) {
  Volume<T> dx(input_shape);
  const std::size_t S = input_shape.spatial();
  for (int n = 0; n < input_shape.n; ++n)
    for (int c = 0; c < input_shape.c; ++c) {
      const T g = dy(n, c) / static_cast<T>(S);
      std::fill_n(dx.sample(n) + c * S, S, g);
    }
  return dx;
}

template <class T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
  Matrix<T> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

#define TEQ_INSTANTIATE(T)                                                        \
  template struct Param<T>;                                                       \
  template class Conv3d<T>;                                                       \
  template class BatchNorm3d<T>;                                                  \
  template class ResBlock<T>;                                                     \
  template class Linear<T>;                                                       \
  template class Mlp<T>;                                                          \
  template Matrix<T> global_average_pool<T>(const Volume<T>&);                    \
  template Volume<T> global_average_pool_backward<T>(const Matrix<T>&, const Shape5&); \
  template void relu_inplace<T>(Volume<T>&);                                      \
  template void relu_backward_inplace<T>(Volume<T>&, const Volume<T>&);           \
  template Matrix<T> softmax_rows<T>(const Matrix<T>&);

TEQ_INSTANTIATE(float)
TEQ_INSTANTIATE(double)

#undef TEQ_INSTANTIATE

}  // namespace teq::nn
