#pragma once

#include "spotkit/nn/layers.hpp"

#include <atomic>
#include <memory>
#include <string>
#include <vector>

namespace spotkit::nn {

struct StageSpec {
  int blocks = 1;
  int channels = 32;
  int stride = 2;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// Residual 2D CNN with per-block temporal shift (RegNet-Y style blocks:
/// 1x1 conv, 3x3 grouped conv, squeeze-excitation, 1x1 conv).
struct BackboneConfig {
  int in_channels = 3;
  int stem_channels = 32;
  std::vector<StageSpec> stages = {{1, 32, 2}, {2, 64, 2}, {2, 128, 2}, {1, 368, 2}};
  ShiftMode shift_mode = ShiftMode::kGsm;
  int shift_num = 1;
  int shift_den = 4;
  int group_width = 8;
  double se_ratio = 0.25;

  /// Output feature width (last stage channel count).
  int feature_dim() const { return stages.empty() ? stem_channels : stages.back().channels; }
  /// Product of all spatial strides including the stride-2 stem.
  int total_stride() const;
  /// Frames on each side of a frame that can influence its feature.
  int temporal_radius() const;
  void validate() const;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

std::string to_string(ShiftMode mode);
ShiftMode parse_shift_mode(const std::string& s);

/// Smallest multiple of 4 that is >= channels * num / den, capped at channels.
int shift_channel_count(int channels, int num = 1, int den = 4);

template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const BackboneConfig& cfg, int cin, int cout, int stride);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, int clip_len, bool train) const;
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParamRefs<T>& out);
  TemporalShift<T>& shift() { return shift_; }

 private:
  bool project_ = false;
  TemporalShift<T> shift_;
  Conv2d<T> conv1_;
  BatchNorm<T> bn1_;
  GroupConv3x3<T> conv2_;
  BatchNorm<T> bn2_;
  SqueezeExcite<T> se_;
  Conv2d<T> conv3_;
  BatchNorm<T> bn3_;
  Conv2d<T> proj_;
  BatchNorm<T> proj_bn_;
  mutable std::vector<std::uint8_t> m1_, m2_, mout_;
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const BackboneConfig& cfg);

  void init(Rng& rng);
  /// frames: [clips * clip_len, H, W, in_channels] -> features [clips * clip_len, 1, 1, D].
  Tensor<T> forward(const Tensor<T>& frames, int clip_len, bool train) const;
  Tensor<T> backward(const Tensor<T>& dfeat);
  void collect(const std::string& prefix, ParamRefs<T>& out);

  const BackboneConfig& config() const { return cfg_; }
  std::vector<ResidualBlock<T>>& blocks() { return blocks_; }
  /// Number of frames pushed through forward() so far.
  long long frames_evaluated() const { return frames_evaluated_.load(); }
  void reset_counter() { frames_evaluated_ = 0; }

 private:
  BackboneConfig cfg_;
  Conv2d<T> stem_;
  BatchNorm<T> stem_bn_;
  std::vector<ResidualBlock<T>> blocks_;
  mutable std::vector<std::uint8_t> stem_mask_;
  mutable int last_h_ = 0, last_w_ = 0;
  mutable std::atomic<long long> frames_evaluated_{0};

 public:
  Backbone(Backbone&& o) noexcept { *this = std::move(o); }
  Backbone& operator=(Backbone&& o) noexcept {
    cfg_ = std::move(o.cfg_);
    stem_ = std::move(o.stem_);
    stem_bn_ = std::move(o.stem_bn_);
    blocks_ = std::move(o.blocks_);
    frames_evaluated_ = o.frames_evaluated_.load();
    return *this;
  }
};

}  // namespace spotkit::nn
