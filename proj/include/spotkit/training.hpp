#pragma once

#include "spotkit/core.hpp"
#include "spotkit/data/clip.hpp"
#include "spotkit/data/frames.hpp"
#include "spotkit/data/manifest.hpp"
#include "spotkit/model.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace spotkit::training {

/// Non-finite loss; carries the offending step.
class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(int step)
      : Error("training diverged: non-finite loss at step " + std::to_string(step)), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct TrainConfig {
  int clip_len = 100;
  int batch_clips = 8;
  int steps_per_cycle = 625;
  int num_cycles = 50;
  double base_lr = 1e-3;
  int warmup_cycles = 3;
  double weight_decay = 1e-4;
  double fg_weight = 5.0;
  double mixup_alpha = 0.2;
  int dilate_radius = 0;
  std::uint64_t seed = 0;
  bool deterministic = true;
  /// 0 keeps the full frame width.
  int crop_width = 0;
  double jitter_strength = 0.1;
  double blur_probability = 0.2;
  /// Validation uses at most this many val videos (0 = all).
  int val_max_videos = 0;
  data::Modality modality = data::Modality::kRgb;

  void validate() const;
  int total_steps() const { return num_cycles * steps_per_cycle; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Sum over masked-in frames of w_t * CE(softmax(logits_t), dist_t) with
/// w_t = sum_c weights[c] * dist_t[c]. Writes d(loss)/d(logits) when asked.
template <typename T>
double per_frame_loss(const nn::Mat<T>& logits, const SoftLabelSeq& targets, const std::vector<double>& weights,
                      nn::Mat<T>* grad = nullptr);

/// Clips seen with no valid frame (they contribute zero loss).
std::size_t all_masked_clip_count();

/// Linear warmup over warmup_cycles, then cosine decay to the last step.
double lr_at_step(int step, const TrainConfig& config);

/// Adam with decoupled weight decay, applied to trainable parameters; decay
/// only touches parameters flagged for it.
class AdamW {
 public:
  explicit AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(nn::ParamRefs<float>& params, double lr);

 private:
  double wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct CycleLog {
  int cycle = 0;
  double mean_loss = 0;
  double lr = 0;
  double val_map = 0;
};

nlohmann::json to_json(const CycleLog& row);

struct TrainOptions {
  /// Where best.ckpt and train_log.jsonl go; empty keeps everything in memory.
  std::filesystem::path out_dir;
  /// Called after every cycle.
  std::function<void(const CycleLog&)> on_cycle;
  /// Called after every step with (step, loss).
  std::function<void(int, double)> on_step;
};

struct TrainResult {
  std::vector<CycleLog> log;
  std::vector<double> step_losses;
  int best_cycle = -1;
  double best_val_map = -1;
  std::filesystem::path checkpoint;
};

/// Runs num_cycles * steps_per_cycle AdamW steps on random augmented clips of
/// the train split, scoring val mAP @ 1 (no NMS) after each cycle. On return
/// the model holds the best cycle's weights.
TrainResult train(const data::DatasetManifest& manifest, data::FrameStore& frames, SpotModel<float>& model,
                  const TrainConfig& config, const TrainOptions& options = {});

/// mAP @ delta of the model's raw per-frame candidates on the given videos.
double validation_map(const data::DatasetManifest& manifest, data::FrameStore& frames, const SpotModel<float>& model,
                      const std::vector<std::string>& videos, int clip_len, int delta = 1);

struct GradCheckResult {
  double max_rel_error = 0;
  int checked = 0;
  /// Sampled scalars dropped because the step crossed a non-differentiable point.
  int skipped = 0;
};

/// Central differences of per_frame_loss against the analytic gradient on
/// `samples` randomly chosen trainable scalars whose name starts with
/// `prefix`. The model runs in training mode (batch statistics). The relative
/// error of each scalar is |a - n| / max(|a|, |n|, 1e-3 * max|a|).
GradCheckResult finite_difference_check(SpotModel<double>& model, const nn::Tensor<double>& clip,
                                        const SoftLabelSeq& targets, const std::vector<double>& weights,
                                        double epsilon, int samples = 200, std::uint64_t seed = 0,
                                        const std::string& prefix = "");

}  // namespace spotkit::training
