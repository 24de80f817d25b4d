#pragma once

#include "spotkit/nn/recurrent.hpp"

#include <string>
#include <vector>

namespace spotkit::nn {

enum class HeadKind { kBiGru, kBiGruDeep3, kGruStar, kLinear };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& s);

struct HeadConfig {
  HeadKind kind = HeadKind::kBiGru;
  /// Recurrent width per direction; 0 means "match the feature width".
  int hidden = 0;
  int num_classes = 1;
  std::vector<int> grustar_scales = {4, 16};

  int resolved_hidden(int feature_dim) const { return hidden > 0 ? hidden : feature_dim; }
  void validate() const;

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

/// Multi-scale path of the GRU* head: affine + rectifier per frame, max-pool
/// over non-overlapping windows of `scale`, a scale-specific biGRU, then
/// repetition back to full length.
template <typename T>
class ScalePath {
 public:
  ScalePath() = default;
  ScalePath(int in, int hidden, int scale);

  void init(Rng& rng);
  Mat<T> forward(const Mat<T>& x, int batch, int len, bool train) const;
  Mat<T> backward(const Mat<T>& dy);
  void collect(const std::string& prefix, ParamRefs<T>& out);

  int scale() const { return scale_; }
  int out_features() const { return gru_.out_features(); }
  static int pooled_length(int len, int scale) { return (len + scale - 1) / scale; }

 private:
  int scale_ = 1;
  Linear<T> proj_;
  BiGru<T> gru_;
  mutable int batch_ = 0, len_ = 0;
  mutable Mat<T> act_;
  mutable std::vector<Eigen::Index> argmax_;
};

/// Per-frame classifier on top of backbone features: features [rows, D] ->
/// logits [rows, K + 1].
template <typename T>
class Head {
 public:
  Head() = default;
  Head(const HeadConfig& cfg, int feature_dim);

  void init(Rng& rng);
  Mat<T> forward(const Mat<T>& features, int batch, int len, bool train) const;
  Mat<T> backward(const Mat<T>& dlogits);
  void collect(const std::string& prefix, ParamRefs<T>& out);

  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  int feature_dim_ = 0;
  std::vector<BiGru<T>> grus_;
  std::vector<ScalePath<T>> scales_;
  Linear<T> out_;
  mutable std::vector<int> widths_;
};

}  // namespace spotkit::nn
