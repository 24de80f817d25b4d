#include "spotkit/nn/layers.hpp"

#include "spotkit/core.hpp"

#include <algorithm>
#include <cmath>

namespace spotkit::nn {

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int cin, int cout, int kernel, int stride, bool bias)
    : cin_(cin), cout_(cout), kernel_(kernel), stride_(stride), pad_(kernel / 2), has_bias_(bias) {
  if (cin < 1 || cout < 1 || kernel < 1 || stride < 1) throw Error("invalid convolution shape");
  weight_.init("", {cout, kernel, kernel, cin}, true);
  if (has_bias_) bias_.init("", {cout}, false);
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  init_he(weight_, kernel_ * kernel_ * cin_, rng);
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
void Conv2d<T>::zero_init() {
  std::fill(weight_.value.begin(), weight_.value.end(), T(0));
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
Mat<T> Conv2d<T>::make_columns(const Tensor<T>& x, int ho, int wo) const {
  const int kk = kernel_ * kernel_;
  Mat<T> col(static_cast<Eigen::Index>(x.n) * ho * wo, kk * cin_);
  if (kernel_ == 1) {
    for (int i = 0; i < x.n; ++i)
      for (int yo = 0; yo < ho; ++yo)
        for (int xo = 0; xo < wo; ++xo) {
          const T* src = x.at(i, yo * stride_, xo * stride_);
          std::copy(src, src + cin_, &col(((static_cast<Eigen::Index>(i) * ho) + yo) * wo + xo, 0));
        }
    return col;
  }
  for (int i = 0; i < x.n; ++i)
    for (int yo = 0; yo < ho; ++yo)
      for (int xo = 0; xo < wo; ++xo) {
        T* dst = &col(((static_cast<Eigen::Index>(i) * ho) + yo) * wo + xo, 0);
        for (int ky = 0; ky < kernel_; ++ky) {
          const int yi = yo * stride_ - pad_ + ky;
          for (int kx = 0; kx < kernel_; ++kx, dst += cin_) {
            const int xi = xo * stride_ - pad_ + kx;
            if (yi < 0 || yi >= x.h || xi < 0 || xi >= x.w) {
              std::fill(dst, dst + cin_, T(0));
            } else {
              const T* src = x.at(i, yi, xi);
              std::copy(src, src + cin_, dst);
            }
          }
        }
      }
  return col;
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool train) const {
  if (x.c != cin_) throw Error("convolution input has " + std::to_string(x.c) + " channels, expected " +
                               std::to_string(cin_));
  const int ho = out_size(x.h), wo = out_size(x.w);
  Tensor<T> y(x.n, ho, wo, cout_);
  ConstMatMap<T> wmat(weight_.value.data(), cout_, kernel_ * kernel_ * cin_);
  auto out = y.rows();
  if (kernel_ == 1 && stride_ == 1 && !train) {
    out.noalias() = x.rows() * wmat.transpose();
  } else {
    Mat<T> col = make_columns(x, ho, wo);
    out.noalias() = col * wmat.transpose();
    if (train) {
      col_ = std::move(col);
      in_n_ = x.n;
      in_h_ = x.h;
      in_w_ = x.w;
    }
  }
  if (has_bias_) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias_.value.data(), cout_);
    out.rowwise() += b;
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  auto d = dy.rows();
  MatMap<T> dw(weight_.grad.data(), cout_, kernel_ * kernel_ * cin_);
  dw.noalias() += d.transpose() * col_;
  if (has_bias_) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(bias_.grad.data(), cout_);
    db += d.colwise().sum();
  }
  ConstMatMap<T> wmat(weight_.value.data(), cout_, kernel_ * kernel_ * cin_);
  Mat<T> dcol = d * wmat;
  Tensor<T> dx(in_n_, in_h_, in_w_, cin_);
  const int ho = dy.h, wo = dy.w;
  for (int i = 0; i < dy.n; ++i)
    for (int yo = 0; yo < ho; ++yo)
      for (int xo = 0; xo < wo; ++xo) {
        const T* src = &dcol(((static_cast<Eigen::Index>(i) * ho) + yo) * wo + xo, 0);
        for (int ky = 0; ky < kernel_; ++ky) {
          const int yi = yo * stride_ - pad_ + ky;
          for (int kx = 0; kx < kernel_; ++kx, src += cin_) {
            const int xi = xo * stride_ - pad_ + kx;
            if (yi < 0 || yi >= in_h_ || xi < 0 || xi >= in_w_) continue;
            T* dst = dx.at(i, yi, xi);
            for (int c = 0; c < cin_; ++c) dst[c] += src[c];
          }
        }
      }
  col_.resize(0, 0);
  return dx;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  weight_.name = prefix + ".weight";
  out.push_back(&weight_);
  if (has_bias_) {
    bias_.name = prefix + ".bias";
    out.push_back(&bias_);
  }
}

// ---------------------------------------------------------- GroupConv3x3

template <typename T>
GroupConv3x3<T>::GroupConv3x3(int channels, int group_width, int stride)
    : channels_(channels), gw_(group_width), stride_(stride) {
  if (group_width < 1 || channels % group_width != 0) {
    throw Error("channel count " + std::to_string(channels) + " is not a multiple of group width " +
                std::to_string(group_width));
  }
  groups_ = channels / group_width;
  weight_.init("", {groups_, 3, 3, gw_, gw_}, true);
}

template <typename T>
void GroupConv3x3<T>::init(Rng& rng) {
  init_he(weight_, 9 * gw_, rng);
}

namespace {

// GW > 0 fixes the group width at compile time so the channel loops unroll.
template <int GW, typename T>
void group_conv_forward(const Tensor<T>& x, Tensor<T>& y, const T* wbase, int groups, int gw_dyn, int stride) {
  const int gw = GW > 0 ? GW : gw_dyn;
  const int gsz = gw * gw;
  for (int i = 0; i < x.n; ++i)
    for (int yo = 0; yo < y.h; ++yo)
      for (int xo = 0; xo < y.w; ++xo) {
        T* o = y.at(i, yo, xo);
        for (int ky = 0; ky < 3; ++ky) {
          const int yi = yo * stride - 1 + ky;
          if (yi < 0 || yi >= x.h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int xi = xo * stride - 1 + kx;
            if (xi < 0 || xi >= x.w) continue;
            const T* in = x.at(i, yi, xi);
            for (int g = 0; g < groups; ++g) {
              const T* wg = wbase + static_cast<std::size_t>((g * 3 + ky) * 3 + kx) * gsz;
              const T* ig = in + g * gw;
              T* og = o + g * gw;
              for (int ci = 0; ci < gw; ++ci) {
                const T a = ig[ci];
                const T* wr = wg + ci * gw;
                for (int co = 0; co < gw; ++co) og[co] += a * wr[co];
              }
            }
          }
        }
      }
}

template <int GW, typename T>
void group_conv_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx, const T* wbase, T* dwbase,
                         int groups, int gw_dyn, int stride) {
  const int gw = GW > 0 ? GW : gw_dyn;
  const int gsz = gw * gw;
  for (int i = 0; i < dy.n; ++i)
    for (int yo = 0; yo < dy.h; ++yo)
      for (int xo = 0; xo < dy.w; ++xo) {
        const T* d = dy.at(i, yo, xo);
        for (int ky = 0; ky < 3; ++ky) {
          const int yi = yo * stride - 1 + ky;
          if (yi < 0 || yi >= x.h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int xi = xo * stride - 1 + kx;
            if (xi < 0 || xi >= x.w) continue;
            const T* in = x.at(i, yi, xi);
            T* din = dx.at(i, yi, xi);
            for (int g = 0; g < groups; ++g) {
              const std::size_t off = static_cast<std::size_t>((g * 3 + ky) * 3 + kx) * gsz;
              const T* wg = wbase + off;
              T* dwg = dwbase + off;
              const T* dg = d + g * gw;
              for (int ci = 0; ci < gw; ++ci) {
                const T a = in[g * gw + ci];
                const T* wr = wg + ci * gw;
                T* dwr = dwg + ci * gw;
                T acc = 0;
                for (int co = 0; co < gw; ++co) {
                  acc += dg[co] * wr[co];
                  dwr[co] += a * dg[co];
                }
                din[g * gw + ci] += acc;
              }
            }
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> GroupConv3x3<T>::forward(const Tensor<T>& x, bool train) const {
  if (x.c != channels_) throw Error("grouped convolution channel mismatch");
  const int ho = (x.h - 1) / stride_ + 1, wo = (x.w - 1) / stride_ + 1;
  Tensor<T> y(x.n, ho, wo, channels_);
  if (gw_ == 8) {
    group_conv_forward<8>(x, y, weight_.value.data(), groups_, gw_, stride_);
  } else {
    group_conv_forward<0>(x, y, weight_.value.data(), groups_, gw_, stride_);
  }
  if (train) x_ = x;
  return y;
}

template <typename T>
Tensor<T> GroupConv3x3<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dx(x_.n, x_.h, x_.w, channels_);
  if (gw_ == 8) {
    group_conv_backward<8>(x_, dy, dx, weight_.value.data(), weight_.grad.data(), groups_, gw_, stride_);
  } else {
    group_conv_backward<0>(x_, dy, dx, weight_.value.data(), weight_.grad.data(), groups_, gw_, stride_);
  }
  x_ = Tensor<T>();
  return dx;
}

template <typename T>
void GroupConv3x3<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  weight_.name = prefix + ".weight";
  out.push_back(&weight_);
}

// ------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(int channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.init("", {channels}, false);
  beta_.init("", {channels}, false);
  running_mean_.init("", {channels}, false, false);
  running_var_.init("", {channels}, false, false);
  std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
  std::fill(running_var_.value.begin(), running_var_.value.end(), T(1));
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, bool train) const {
  if (x.c != channels_) throw Error("batch norm channel mismatch");
  using RowVec = Eigen::Array<T, 1, Eigen::Dynamic>;
  Tensor<T> y(x.n, x.h, x.w, x.c);
  auto xr = x.rows().array();
  auto yr = y.rows().array();
  Eigen::Map<const RowVec> gamma(gamma_.value.data(), channels_);
  Eigen::Map<const RowVec> beta(beta_.value.data(), channels_);
  const Eigen::Index m = xr.rows();
  if (!train) {
    Eigen::Map<const RowVec> mean(running_mean_.value.data(), channels_);
    Eigen::Map<const RowVec> var(running_var_.value.data(), channels_);
    const RowVec scale = gamma / (var + static_cast<T>(eps_)).sqrt();
    const RowVec shift = beta - mean * scale;
    yr = (xr.rowwise() * scale).rowwise() + shift;
    return y;
  }
  const RowVec mean = xr.colwise().sum() / static_cast<T>(m);
  xhat_ = Tensor<T>(x.n, x.h, x.w, x.c);
  auto xh = xhat_.rows().array();
  xh = xr.rowwise() - mean;
  const RowVec var = xh.square().colwise().sum() / static_cast<T>(m);
  const RowVec inv = (var + static_cast<T>(eps_)).rsqrt();
  xh.rowwise() *= inv;
  yr = (xh.rowwise() * gamma).rowwise() + beta;
  inv_std_.assign(inv.data(), inv.data() + channels_);
  const T mom = static_cast<T>(momentum_);
  const T unbias = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
  for (int c = 0; c < channels_; ++c) {
    running_mean_.value[c] = (1 - mom) * running_mean_.value[c] + mom * mean[c];
    running_var_.value[c] = (1 - mom) * running_var_.value[c] + mom * var[c] * unbias;
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& dy) {
  using RowVec = Eigen::Array<T, 1, Eigen::Dynamic>;
  auto d = dy.rows().array();
  auto xh = xhat_.rows().array();
  const Eigen::Index m = d.rows();
  const RowVec dbeta = d.colwise().sum();
  const RowVec dgamma = (d * xh).colwise().sum();
  Eigen::Map<RowVec> gb(beta_.grad.data(), channels_);
  Eigen::Map<RowVec> gg(gamma_.grad.data(), channels_);
  gb += dbeta;
  gg += dgamma;
  Eigen::Map<const RowVec> gamma(gamma_.value.data(), channels_);
  Eigen::Map<const RowVec> inv(inv_std_.data(), channels_);
  const RowVec k = gamma * inv / static_cast<T>(m);
  Tensor<T> dx(dy.n, dy.h, dy.w, dy.c);
  auto dxr = dx.rows().array();
  dxr = ((d * static_cast<T>(m)).rowwise() - dbeta - (xh.rowwise() * dgamma)).rowwise() * k;
  xhat_ = Tensor<T>();
  return dx;
}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  gamma_.name = prefix + ".gamma";
  beta_.name = prefix + ".beta";
  running_mean_.name = prefix + ".running_mean";
  running_var_.name = prefix + ".running_var";
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ------------------------------------------------------------------ ReLU

template <typename T>
void relu_inplace(Tensor<T>& x, std::vector<std::uint8_t>* mask) {
  if (mask) mask->resize(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const bool on = x.v[i] > T(0);
    if (!on) x.v[i] = T(0);
    if (mask) (*mask)[i] = on;
  }
}

template <typename T>
void relu_backward_inplace(Tensor<T>& dy, const std::vector<std::uint8_t>& mask) {
  for (std::size_t i = 0; i < dy.numel(); ++i)
    if (!mask[i]) dy.v[i] = T(0);
}

// --------------------------------------------------------- SqueezeExcite

template <typename T>
SqueezeExcite<T>::SqueezeExcite(int channels, int squeeze_channels)
    : channels_(channels), squeeze_(squeeze_channels) {
  w1_.init("", {squeeze_, channels_}, true);
  b1_.init("", {squeeze_}, false);
  w2_.init("", {channels_, squeeze_}, true);
  b2_.init("", {channels_}, false);
}

template <typename T>
void SqueezeExcite<T>::init(Rng& rng) {
  init_he(w1_, channels_, rng);
  init_uniform(w2_, std::sqrt(1.0 / squeeze_), rng);
}

template <typename T>
Tensor<T> SqueezeExcite<T>::forward(const Tensor<T>& x, bool train) const {
  const int hw = x.h * x.w;
  Mat<T> pooled = Mat<T>::Zero(x.n, channels_);
  for (int i = 0; i < x.n; ++i) {
    ConstMatMap<T> img(x.at(i, 0, 0), hw, channels_);
    pooled.row(i) = img.colwise().sum() / static_cast<T>(hw);
  }
  ConstMatMap<T> w1(w1_.value.data(), squeeze_, channels_);
  ConstMatMap<T> w2(w2_.value.data(), channels_, squeeze_);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b1(b1_.value.data(), squeeze_);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b2(b2_.value.data(), channels_);
  Mat<T> hidden = pooled * w1.transpose();
  hidden.rowwise() += b1;
  hidden = hidden.cwiseMax(T(0));
  Mat<T> gate = hidden * w2.transpose();
  gate.rowwise() += b2;
  gate = (T(1) / (T(1) + (-gate.array()).exp())).matrix();
  Tensor<T> y(x.n, x.h, x.w, x.c);
  for (int i = 0; i < x.n; ++i) {
    ConstMatMap<T> img(x.at(i, 0, 0), hw, channels_);
    MatMap<T> out(y.at(i, 0, 0), hw, channels_);
    out = img.array().rowwise() * gate.row(i).array();
  }
  if (train) {
    x_ = x;
    pooled_ = std::move(pooled);
    hidden_ = std::move(hidden);
    gate_ = std::move(gate);
  }
  return y;
}

template <typename T>
Tensor<T> SqueezeExcite<T>::backward(const Tensor<T>& dy) {
  const int hw = dy.h * dy.w;
  Mat<T> dgate(dy.n, channels_);
  Tensor<T> dx(dy.n, dy.h, dy.w, dy.c);
  for (int i = 0; i < dy.n; ++i) {
    ConstMatMap<T> d(dy.at(i, 0, 0), hw, channels_);
    ConstMatMap<T> img(x_.at(i, 0, 0), hw, channels_);
    dgate.row(i) = (d.array() * img.array()).colwise().sum().matrix();
    MatMap<T> dxi(dx.at(i, 0, 0), hw, channels_);
    dxi = d.array().rowwise() * gate_.row(i).array();
  }
  Mat<T> dz2 = (dgate.array() * gate_.array() * (T(1) - gate_.array())).matrix();
  MatMap<T> gw2(w2_.grad.data(), channels_, squeeze_);
  gw2.noalias() += dz2.transpose() * hidden_;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb2(b2_.grad.data(), channels_);
  gb2 += dz2.colwise().sum();
  ConstMatMap<T> w2(w2_.value.data(), channels_, squeeze_);
  Mat<T> dz1 = dz2 * w2;
  dz1 = (dz1.array() * (hidden_.array() > T(0)).template cast<T>()).matrix();
  MatMap<T> gw1(w1_.grad.data(), squeeze_, channels_);
  gw1.noalias() += dz1.transpose() * pooled_;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb1(b1_.grad.data(), squeeze_);
  gb1 += dz1.colwise().sum();
  ConstMatMap<T> w1(w1_.value.data(), squeeze_, channels_);
  Mat<T> dpool = (dz1 * w1) / static_cast<T>(hw);
  for (int i = 0; i < dy.n; ++i) {
    MatMap<T> dxi(dx.at(i, 0, 0), hw, channels_);
    dxi.rowwise() += dpool.row(i);
  }
  x_ = Tensor<T>();
  return dx;
}

template <typename T>
void SqueezeExcite<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  w1_.name = prefix + ".fc1.weight";
  b1_.name = prefix + ".fc1.bias";
  w2_.name = prefix + ".fc2.weight";
  b2_.name = prefix + ".fc2.bias";
  out.insert(out.end(), {&w1_, &b1_, &w2_, &b2_});
}

// ------------------------------------------------------- global pooling

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  Tensor<T> y(x.n, 1, 1, x.c);
  const int hw = x.h * x.w;
  for (int i = 0; i < x.n; ++i) {
    ConstMatMap<T> img(x.at(i, 0, 0), hw, x.c);
    MatMap<T>(y.at(i, 0, 0), 1, x.c) = img.colwise().sum() / static_cast<T>(hw);
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, int h, int w) {
  Tensor<T> dx(dy.n, h, w, dy.c);
  const T inv = T(1) / static_cast<T>(h * w);
  for (int i = 0; i < dy.n; ++i) {
    ConstMatMap<T> d(dy.at(i, 0, 0), 1, dy.c);
    MatMap<T> dxi(dx.at(i, 0, 0), h * w, dy.c);
    dxi.rowwise() = d.row(0) * inv;
  }
  return dx;
}

// -------------------------------------------------------- temporal shift

namespace {

// Moves channels [c0, c1) so frame t reads frame t - dir (dir = +1: from the
// past, dir = -1: from the future); vacated frames become zero.
template <typename T>
void shift_range(Tensor<T>& x, int clip_len, int c0, int c1, int dir) {
  if (c1 <= c0) return;
  const int clips = x.n / clip_len;
  const int hw = x.h * x.w;
  for (int b = 0; b < clips; ++b) {
    const int base = b * clip_len;
    auto move_frame = [&](int dst, int src) {
      for (int p = 0; p < hw; ++p) {
        T* d = x.at(base + dst, 0, 0) + static_cast<std::size_t>(p) * x.c;
        if (src < 0) {
          std::fill(d + c0, d + c1, T(0));
        } else {
          const T* s = x.at(base + src, 0, 0) + static_cast<std::size_t>(p) * x.c;
          std::copy(s + c0, s + c1, d + c0);
        }
      }
    };
    if (dir > 0) {
      for (int t = clip_len - 1; t >= 1; --t) move_frame(t, t - 1);
      move_frame(0, -1);
    } else {
      for (int t = 0; t + 1 < clip_len; ++t) move_frame(t, t + 1);
      move_frame(clip_len - 1, -1);
    }
  }
}

}  // namespace

template <typename T>
void temporal_shift_inplace(Tensor<T>& x, int clip_len, int shift_channels) {
  if (clip_len < 1 || x.n % clip_len != 0) throw Error("frame count is not a multiple of the clip length");
  if (shift_channels % 2 != 0) throw Error("shift channel count must be even");
  const int half = shift_channels / 2;
  shift_range(x, clip_len, 0, half, +1);
  shift_range(x, clip_len, half, shift_channels, -1);
}

template <typename T>
void temporal_shift_adjoint_inplace(Tensor<T>& x, int clip_len, int shift_channels) {
  const int half = shift_channels / 2;
  shift_range(x, clip_len, 0, half, -1);
  shift_range(x, clip_len, half, shift_channels, +1);
}

// --------------------------------------------------------- TemporalShift

template <typename T>
TemporalShift<T>::TemporalShift(ShiftMode mode, int channels, int shift_channels)
    : mode_(mode), channels_(channels), shift_(shift_channels) {
  if (mode_ != ShiftMode::kNone && (shift_ < 2 || shift_ % 2 != 0 || shift_ > channels_)) {
    throw Error("invalid shift channel count " + std::to_string(shift_));
  }
  if (mode_ == ShiftMode::kGsm) gate_ = Conv2d<T>(shift_, 2, 3, 1, true);
}

template <typename T>
void TemporalShift<T>::init(Rng& rng) {
  if (mode_ != ShiftMode::kGsm) return;
  gate_.init(rng);
}

template <typename T>
void TemporalShift<T>::zero_gate() {
  if (mode_ == ShiftMode::kGsm) gate_.zero_init();
}

template <typename T>
Tensor<T> TemporalShift<T>::forward(const Tensor<T>& x, int clip_len, bool train) const {
  if (mode_ == ShiftMode::kNone) return x;
  const int np = x.pixels();
  Tensor<T> xs(x.n, x.h, x.w, shift_);
  for (int p = 0; p < np; ++p) {
    const T* src = x.v.data() + static_cast<std::size_t>(p) * x.c;
    std::copy(src, src + shift_, xs.v.data() + static_cast<std::size_t>(p) * shift_);
  }
  Tensor<T> out_s;
  Tensor<T> g;
  if (mode_ == ShiftMode::kTsm) {
    out_s = xs;
    temporal_shift_inplace(out_s, clip_len, shift_);
  } else {
    g = gate_.forward(xs, train);
    for (auto& a : g.v) a = std::tanh(a);
    Tensor<T> r(x.n, x.h, x.w, shift_);
    const int half = shift_ / 2;
    for (int p = 0; p < np; ++p) {
      const T* xp = xs.v.data() + static_cast<std::size_t>(p) * shift_;
      T* rp = r.v.data() + static_cast<std::size_t>(p) * shift_;
      const T g0 = g.v[2 * p], g1 = g.v[2 * p + 1];
      for (int c = 0; c < half; ++c) rp[c] = g0 * xp[c];
      for (int c = half; c < shift_; ++c) rp[c] = g1 * xp[c];
    }
    out_s = r;
    temporal_shift_inplace(out_s, clip_len, shift_);
    for (std::size_t i = 0; i < out_s.numel(); ++i) out_s.v[i] += xs.v[i] - r.v[i];
  }
  Tensor<T> y = x;
  for (int p = 0; p < np; ++p) {
    const T* src = out_s.v.data() + static_cast<std::size_t>(p) * shift_;
    std::copy(src, src + shift_, y.v.data() + static_cast<std::size_t>(p) * x.c);
  }
  if (train) {
    clip_len_ = clip_len;
    if (mode_ == ShiftMode::kGsm) {
      xs_ = std::move(xs);
      g_ = std::move(g);
    }
  }
  return y;
}

template <typename T>
Tensor<T> TemporalShift<T>::backward(const Tensor<T>& dy) {
  if (mode_ == ShiftMode::kNone) return dy;
  const int np = dy.pixels();
  Tensor<T> dys(dy.n, dy.h, dy.w, shift_);
  for (int p = 0; p < np; ++p) {
    const T* src = dy.v.data() + static_cast<std::size_t>(p) * dy.c;
    std::copy(src, src + shift_, dys.v.data() + static_cast<std::size_t>(p) * shift_);
  }
  Tensor<T> dxs;
  if (mode_ == ShiftMode::kTsm) {
    dxs = std::move(dys);
    temporal_shift_adjoint_inplace(dxs, clip_len_, shift_);
  } else {
    Tensor<T> dr = dys;
    temporal_shift_adjoint_inplace(dr, clip_len_, shift_);
    for (std::size_t i = 0; i < dr.numel(); ++i) dr.v[i] -= dys.v[i];
    dxs = dys;
    Tensor<T> dgpre(dy.n, dy.h, dy.w, 2);
    const int half = shift_ / 2;
    for (int p = 0; p < np; ++p) {
      const std::size_t o = static_cast<std::size_t>(p) * shift_;
      const T g0 = g_.v[2 * p], g1 = g_.v[2 * p + 1];
      T s0 = 0, s1 = 0;
      for (int c = 0; c < half; ++c) {
        dxs.v[o + c] += dr.v[o + c] * g0;
        s0 += dr.v[o + c] * xs_.v[o + c];
      }
      for (int c = half; c < shift_; ++c) {
        dxs.v[o + c] += dr.v[o + c] * g1;
        s1 += dr.v[o + c] * xs_.v[o + c];
      }
      dgpre.v[2 * p] = s0 * (T(1) - g0 * g0);
      dgpre.v[2 * p + 1] = s1 * (T(1) - g1 * g1);
    }
    Tensor<T> dgate_in = gate_.backward(dgpre);
    for (std::size_t i = 0; i < dxs.numel(); ++i) dxs.v[i] += dgate_in.v[i];
    xs_ = Tensor<T>();
    g_ = Tensor<T>();
  }
  Tensor<T> dx = dy;
  for (int p = 0; p < np; ++p) {
    const T* src = dxs.v.data() + static_cast<std::size_t>(p) * shift_;
    std::copy(src, src + shift_, dx.v.data() + static_cast<std::size_t>(p) * dy.c);
  }
  return dx;
}

template <typename T>
void TemporalShift<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  if (mode_ == ShiftMode::kGsm) gate_.collect(prefix + ".gate", out);
}

#define SPOTKIT_INSTANTIATE(T)                                                             \
  template class Conv2d<T>;                                                                \
  template class GroupConv3x3<T>;                                                          \
  template class BatchNorm<T>;                                                             \
  template class SqueezeExcite<T>;                                                         \
  template class TemporalShift<T>;                                                         \
  template void relu_inplace<T>(Tensor<T>&, std::vector<std::uint8_t>*);                   \
  template void relu_backward_inplace<T>(Tensor<T>&, const std::vector<std::uint8_t>&);    \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                 \
  template Tensor<T> global_avg_pool_backward<T>(const Tensor<T>&, int, int);              \
  template void temporal_shift_inplace<T>(Tensor<T>&, int, int);                           \
  template void temporal_shift_adjoint_inplace<T>(Tensor<T>&, int, int);

SPOTKIT_INSTANTIATE(float)
SPOTKIT_INSTANTIATE(double)

#undef SPOTKIT_INSTANTIATE

}  // namespace spotkit::nn
