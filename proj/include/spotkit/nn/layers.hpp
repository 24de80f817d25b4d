#pragma once

#include "spotkit/nn/tensor.hpp"

#include <cstdint>

namespace spotkit::nn {

// Layers cache what backward() needs during a training forward pass
// (train = true). Eval passes leave every cache untouched, so a model can
// serve concurrent eval passes while training requires exclusive access.

/// Dense (groups = 1) 2D convolution with "same" padding, NHWC.
/// Weight layout: [cout][k][k][cin].
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int cin, int cout, int kernel, int stride, bool bias);

  void init(Rng& rng);
  void zero_init();
  Tensor<T> forward(const Tensor<T>& x, bool train) const;
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParamRefs<T>& out);

  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  Mat<T> make_columns(const Tensor<T>& x, int ho, int wo) const;

  int cin_ = 0, cout_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Param<T> weight_, bias_;
  mutable Mat<T> col_;
  mutable int in_n_ = 0, in_h_ = 0, in_w_ = 0;
};

/// 3x3 grouped convolution with equal in/out channels and fixed group width.
/// Weight layout: [group][3][3][cin_g][cout_g].
template <typename T>
class GroupConv3x3 {
 public:
  GroupConv3x3() = default;
  GroupConv3x3(int channels, int group_width, int stride);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, bool train) const;
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParamRefs<T>& out);

 private:
  int channels_ = 0, gw_ = 0, groups_ = 0, stride_ = 1;
  Param<T> weight_;
  mutable Tensor<T> x_;
};

/// Per-channel batch normalization over all N*H*W positions.
template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x, bool train) const;
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParamRefs<T>& out);
  Param<T>& gamma() { return gamma_; }

 private:
  int channels_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  Param<T> gamma_, beta_;
  mutable Param<T> running_mean_, running_var_;
  mutable Tensor<T> xhat_;
  mutable std::vector<T> inv_std_;
};

/// In-place rectifier; `mask` records the active positions when non-null.
template <typename T>
void relu_inplace(Tensor<T>& x, std::vector<std::uint8_t>* mask);
template <typename T>
void relu_backward_inplace(Tensor<T>& dy, const std::vector<std::uint8_t>& mask);

/// Squeeze-and-excitation channel gating.
template <typename T>
class SqueezeExcite {
 public:
  SqueezeExcite() = default;
  SqueezeExcite(int channels, int squeeze_channels);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, bool train) const;
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParamRefs<T>& out);

 private:
  int channels_ = 0, squeeze_ = 0;
  Param<T> w1_, b1_, w2_, b2_;
  mutable Tensor<T> x_;
  mutable Mat<T> pooled_, hidden_, gate_;
};

/// Mean over the spatial positions of each image: [n,h,w,c] -> [n,1,1,c].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, int h, int w);

/// Shifts channels [0, shift_channels) of clip-major frames (frame index
/// n = clip * clip_len + t) along time: the first half reads t - 1, the second
/// half reads t + 1, zero outside the clip.
template <typename T>
void temporal_shift_inplace(Tensor<T>& x, int clip_len, int shift_channels);
/// Adjoint of temporal_shift_inplace.
template <typename T>
void temporal_shift_adjoint_inplace(Tensor<T>& x, int clip_len, int shift_channels);

enum class ShiftMode { kGsm, kTsm, kNone };

/// Gate-shift (gsm), plain temporal shift (tsm) or identity (none) applied to
/// the leading shift_channels of a feature block.
///   gsm: g = tanh(conv3x3(x_s)), r = g * x_s, out_s = shift(r) + x_s - r
/// The gate has one output map per shift direction.
template <typename T>
class TemporalShift {
 public:
  TemporalShift() = default;
  TemporalShift(ShiftMode mode, int channels, int shift_channels);

  void init(Rng& rng);
  void zero_gate();
  Tensor<T> forward(const Tensor<T>& x, int clip_len, bool train) const;
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParamRefs<T>& out);

  ShiftMode mode() const { return mode_; }
  int shift_channels() const { return shift_; }
  Conv2d<T>& gate_conv() { return gate_; }

 private:
  ShiftMode mode_ = ShiftMode::kNone;
  int channels_ = 0, shift_ = 0;
  Conv2d<T> gate_;
  mutable int clip_len_ = 0;
  mutable Tensor<T> xs_, g_;
};

}  // namespace spotkit::nn
