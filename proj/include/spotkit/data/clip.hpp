#pragma once

#include "spotkit/core.hpp"
#include "spotkit/data/frames.hpp"
#include "spotkit/nn/tensor.hpp"

#include <string>

namespace spotkit::data {

/// L consecutive frames with per-frame targets. labels.mask is the validity
/// mask: 0 exactly on padded positions.
struct Clip {
  nn::Tensor<float> frames;  // [L, H, W, C]
  SoftLabelSeq labels;
  std::string video_id;
  int start = 0;

  int length() const { return frames.n; }
};

/// Frames [start, start + L) of `video`; positions past the end are black,
/// background-labelled and masked out. `dense` may be empty (all background).
Clip extract_clip(const VideoData& video, const DenseLabelSeq& dense, int num_classes, int start, int clip_len,
                  const std::string& video_id = {});

/// Uniform start in [0, max(0, N - L)].
Clip sample_clip(const VideoData& video, const DenseLabelSeq& dense, int num_classes, int clip_len, nn::Rng& rng,
                 const std::string& video_id = {});

struct AugmentConfig {
  int crop_width = 224;
  double jitter_strength = 0.1;
  double blur_probability = 0.2;
  double mixup_alpha = 0.2;

  void validate() const;
};

/// Width-only random crop (one offset for the whole clip), then clip-consistent
/// color jitter and Gaussian blur on masked-in frames. Labels are untouched.
Clip augment(const Clip& clip, const AugmentConfig& config, nn::Rng& rng);

/// frames = lambda*A + (1-lambda)*B, label rows mixed with the same lambda,
/// mask = A.mask AND B.mask. lambda 1 (0) returns A (B) exactly.
Clip mixup(const Clip& a, const Clip& b, double lambda);

/// Beta(alpha, alpha) draw via two gamma variates.
double sample_beta(double alpha, nn::Rng& rng);

}  // namespace spotkit::data
