#include "spotkit/nn/backbone.hpp"

#include "spotkit/core.hpp"

#include <cmath>

namespace spotkit::nn {

int BackboneConfig::total_stride() const {
  int s = 2;
  for (const auto& st : stages) s *= st.stride;
  return s;
}

int BackboneConfig::temporal_radius() const {
  if (shift_mode == ShiftMode::kNone) return 0;
  int r = 0;
  for (const auto& st : stages) r += st.blocks;
  return r;
}

void BackboneConfig::validate() const {
  if (in_channels < 1) throw Error("backbone input channels must be >= 1");
  if (stem_channels < 4) throw Error("stem channel count must be >= 4");
  if (stages.empty()) throw Error("backbone needs at least one stage");
  if (shift_num < 1 || shift_den < 1 || shift_num > shift_den) {
    throw Error("shift fraction must lie in (0, 1]");
  }
  for (const auto& st : stages) {
    if (st.blocks < 1) throw Error("stage block count must be >= 1");
    if (st.channels < 4) throw Error("stage channel count must be >= 4");
    if (st.stride != 1 && st.stride != 2) throw Error("stage stride must be 1 or 2");
    if (st.channels % group_width != 0) {
      throw Error("stage channels " + std::to_string(st.channels) + " not divisible by group width " +
                  std::to_string(group_width));
    }
  }
  if (!(se_ratio > 0.0)) throw Error("squeeze ratio must be > 0");
}

std::string to_string(ShiftMode mode) {
  switch (mode) {
    case ShiftMode::kGsm: return "gsm";
    case ShiftMode::kTsm: return "tsm";
    case ShiftMode::kNone: return "none";
  }
  return "none";
}

ShiftMode parse_shift_mode(const std::string& s) {
  if (s == "gsm") return ShiftMode::kGsm;
  if (s == "tsm") return ShiftMode::kTsm;
  if (s == "none") return ShiftMode::kNone;
  throw Error("unknown shift mode \"" + s + "\" (expected gsm, tsm or none)");
}

int shift_channel_count(int channels, int num, int den) {
  if (channels < 1) throw Error("channel count must be >= 1");
  if (num < 1 || den < 1 || num > den) throw Error("shift fraction must lie in (0, 1]");
  // ceil(channels * num / den) rounded up to a multiple of 4, in integers.
  const long long scaled = (static_cast<long long>(channels) * num + den - 1) / den;
  const long long rounded = (scaled + 3) / 4 * 4;
  return static_cast<int>(std::min<long long>(rounded, channels));
}

// --------------------------------------------------------- ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(const BackboneConfig& cfg, int cin, int cout, int stride)
    : project_(stride != 1 || cin != cout),
      shift_(cfg.shift_mode, cin,
             cfg.shift_mode == ShiftMode::kNone ? 0 : shift_channel_count(cin, cfg.shift_num, cfg.shift_den)),
      conv1_(cin, cout, 1, 1, false),
      bn1_(cout),
      conv2_(cout, cfg.group_width, stride),
      bn2_(cout),
      se_(cout, std::max(1, static_cast<int>(std::lround(cfg.se_ratio * cin)))),
      conv3_(cout, cout, 1, 1, false),
      bn3_(cout) {
  if (project_) {
    proj_ = Conv2d<T>(cin, cout, 1, stride, false);
    proj_bn_ = BatchNorm<T>(cout);
  }
}

template <typename T>
void ResidualBlock<T>::init(Rng& rng) {
  shift_.init(rng);
  conv1_.init(rng);
  conv2_.init(rng);
  se_.init(rng);
  conv3_.init(rng);
  if (project_) proj_.init(rng);
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, int clip_len, bool train) const {
  Tensor<T> h = shift_.forward(x, clip_len, train);
  h = bn1_.forward(conv1_.forward(h, train), train);
  relu_inplace(h, train ? &m1_ : nullptr);
  h = bn2_.forward(conv2_.forward(h, train), train);
  relu_inplace(h, train ? &m2_ : nullptr);
  h = se_.forward(h, train);
  h = bn3_.forward(conv3_.forward(h, train), train);
  if (project_) {
    Tensor<T> sc = proj_bn_.forward(proj_.forward(x, train), train);
    for (std::size_t i = 0; i < h.numel(); ++i) h.v[i] += sc.v[i];
  } else {
    for (std::size_t i = 0; i < h.numel(); ++i) h.v[i] += x.v[i];
  }
  relu_inplace(h, train ? &mout_ : nullptr);
  return h;
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> d = dy;
  relu_backward_inplace(d, mout_);
  Tensor<T> dx;
  if (project_) {
    dx = proj_.backward(proj_bn_.backward(d));
  } else {
    dx = d;
  }
  Tensor<T> h = se_.backward(conv3_.backward(bn3_.backward(d)));
  relu_backward_inplace(h, m2_);
  h = conv2_.backward(bn2_.backward(h));
  relu_backward_inplace(h, m1_);
  h = shift_.backward(conv1_.backward(bn1_.backward(h)));
  for (std::size_t i = 0; i < dx.numel(); ++i) dx.v[i] += h.v[i];
  return dx;
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  shift_.collect(prefix + ".shift", out);
  conv1_.collect(prefix + ".conv1", out);
  bn1_.collect(prefix + ".bn1", out);
  conv2_.collect(prefix + ".conv2", out);
  bn2_.collect(prefix + ".bn2", out);
  se_.collect(prefix + ".se", out);
  conv3_.collect(prefix + ".conv3", out);
  bn3_.collect(prefix + ".bn3", out);
  if (project_) {
    proj_.collect(prefix + ".proj", out);
    proj_bn_.collect(prefix + ".proj_bn", out);
  }
}

// -------------------------------------------------------------- Backbone

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  stem_ = Conv2d<T>(cfg_.in_channels, cfg_.stem_channels, 3, 2, false);
  stem_bn_ = BatchNorm<T>(cfg_.stem_channels);
  int cin = cfg_.stem_channels;
  for (const auto& st : cfg_.stages) {
    for (int b = 0; b < st.blocks; ++b) {
      blocks_.emplace_back(cfg_, cin, st.channels, b == 0 ? st.stride : 1);
      cin = st.channels;
    }
  }
}

template <typename T>
void Backbone<T>::init(Rng& rng) {
  stem_.init(rng);
  for (auto& b : blocks_) b.init(rng);
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& frames, int clip_len, bool train) const {
  const int stride = cfg_.total_stride();
  if (frames.c != cfg_.in_channels) {
    throw Error("backbone expects " + std::to_string(cfg_.in_channels) + " input channels, got " +
                std::to_string(frames.c));
  }
  if (frames.h % stride != 0 || frames.w % stride != 0 || frames.h == 0 || frames.w == 0) {
    throw Error("frame size " + std::to_string(frames.h) + "x" + std::to_string(frames.w) +
                " is not compatible with total stride " + std::to_string(stride));
  }
  if (clip_len < 1 || frames.n % clip_len != 0) throw Error("frame count is not a multiple of the clip length");
  frames_evaluated_ += frames.n;
  Tensor<T> h = stem_bn_.forward(stem_.forward(frames, train), train);
  relu_inplace(h, train ? &stem_mask_ : nullptr);
  for (const auto& b : blocks_) h = b.forward(h, clip_len, train);
  if (train) {
    last_h_ = h.h;
    last_w_ = h.w;
  }
  return global_avg_pool(h);
}

template <typename T>
Tensor<T> Backbone<T>::backward(const Tensor<T>& dfeat) {
  Tensor<T> d = global_avg_pool_backward(dfeat, last_h_, last_w_);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = it->backward(d);
  relu_backward_inplace(d, stem_mask_);
  return stem_.backward(stem_bn_.backward(d));
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  stem_.collect(prefix + ".stem", out);
  stem_bn_.collect(prefix + ".stem_bn", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
  }
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace spotkit::nn
