#pragma once

#include "spotkit/core.hpp"
#include "spotkit/nn/backbone.hpp"
#include "spotkit/nn/head.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace spotkit::nn {

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);
void to_json(nlohmann::json& j, const HeadConfig& c);
void from_json(const nlohmann::json& j, HeadConfig& c);

}  // namespace spotkit::nn

namespace spotkit {

using nn::BackboneConfig;
using nn::HeadConfig;
using nn::HeadKind;
using nn::ShiftMode;

/// Desk-scale default: a 4-stage miniature of RegNet-Y 200MF with 368-wide features.
BackboneConfig default_backbone();


/// Feature extractor followed by the per-frame head. Frames are clip-major:
/// frame row = clip * clip_len + t.
template <typename T>
class SpotModel {
 public:
  SpotModel(const BackboneConfig& backbone, const HeadConfig& head);
  SpotModel(const SpotModel&) = delete;
  SpotModel& operator=(const SpotModel&) = delete;

  void init(std::uint64_t seed);

  /// Per-frame features, [clips * clip_len, D].
  nn::Mat<T> features(const nn::Tensor<T>& frames, int clip_len, bool train) const;
  /// Raw per-frame logits, [clips * clip_len, K + 1].
  nn::Mat<T> logits(const nn::Tensor<T>& frames, int clip_len, bool train) const;
  /// Backpropagates d(loss)/d(logits) of the last training logits() call,
  /// accumulating parameter gradients.
  void backward(const nn::Mat<T>& dlogits);

  /// Softmax scores for one clip of frames [L, H, W, C] (eval mode).
  ScoreSeq predict(const nn::Tensor<float>& clip) const;

  /// All parameters and buffers in a stable order with hierarchical names.
  nn::ParamRefs<T> params();
  void zero_grad();
  /// Number of trainable scalars.
  std::size_t parameter_count();

  const BackboneConfig& backbone_config() const { return backbone_.config(); }
  const HeadConfig& head_config() const { return head_.config(); }
  int num_classes() const { return head_.config().num_classes; }
  nn::Backbone<T>& backbone() { return backbone_; }
  const nn::Backbone<T>& backbone() const { return backbone_; }
  nn::Head<T>& head() { return head_; }

 private:
  nn::Backbone<T> backbone_;
  nn::Head<T> head_;
  mutable int last_batch_ = 0, last_len_ = 0;
};

/// Row-wise softmax.
template <typename T>
nn::Mat<T> softmax_rows(const nn::Mat<T>& logits);

template <typename T>
nn::Tensor<T> to_scalar(const nn::Tensor<float>& x);

// ------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int cycle = -1;
  double best_val_map = -1.0;
  nlohmann::json train_config = nlohmann::json::object();
};

/// Writes magic, version, configs and every named parameter array
/// (little-endian). See docs/checkpoint_format.md.
template <typename T>
void save_checkpoint(SpotModel<T>& model, const CheckpointMeta& meta, const std::filesystem::path& path);

struct LoadedModel {
  std::unique_ptr<SpotModel<float>> model;
  CheckpointMeta meta;
};

LoadedModel load_checkpoint(const std::filesystem::path& path);

/// Copies parameter values between two models of identical structure.
template <typename Dst, typename Src>
void copy_parameters(SpotModel<Dst>& dst, SpotModel<Src>& src);

}  // namespace spotkit
