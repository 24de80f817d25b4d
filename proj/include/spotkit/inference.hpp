#pragma once

#include "spotkit/core.hpp"
#include "spotkit/data/frames.hpp"
#include "spotkit/model.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spotkit::inference {

struct WindowPlan {
  std::vector<int> starts;
  int clip_len = 0;
};

/// Starts 0, L/2, L, ... while start + L <= N, plus a final start N - L
/// (clamped to 0) when the last window stops short of frame N - 1.
WindowPlan plan_windows(int num_frames, int clip_len);

struct WindowScores {
  int start = 0;
  ScoreSeq scores;
  /// Valid rows; empty means rows past the video end are the only invalid ones.
  std::vector<std::uint8_t> mask;
};

/// Per-frame mean over every covering window (masked rows excluded).
ScoreSeq average_scores(const std::vector<WindowScores>& windows, int num_frames);

/// One candidate per (frame, foreground class) with score >= min_score, in the
/// global rank order.
std::vector<SpotPrediction> scores_to_predictions(const ScoreSeq& scores, const std::string& video_id,
                                                  double min_score = 0.0);

/// Greedy per-class suppression: a candidate survives iff no kept candidate of
/// its class lies within |frame difference| <= window. Output in rank order.
std::vector<SpotPrediction> nms(const std::vector<SpotPrediction>& preds, int window);

/// Elementwise mean of two probability sequences.
ScoreSeq ensemble(const ScoreSeq& a, const ScoreSeq& b);

/// Median subtraction and clamping to [-20, 20] per frame and channel of an
/// [L, H, W, 2] flow block.
nn::Tensor<float> preprocess_flow(const nn::Tensor<float>& flow);

/// Dense per-frame probabilities for a whole video via 50%-overlapping clips.
ScoreSeq predict_video(const SpotModel<float>& model, const data::VideoData& video, int clip_len);

/// Backbone frame evaluations a strided-window extractor spends on a video:
/// every frame is the centre of its own `window`-frame stack.
long strided_window_evaluations(int num_frames, int window);

/// Rounds scores to the 6 decimals of the file format and re-sorts, so the
/// in-memory list equals what a reader of the file sees.
std::vector<SpotPrediction> quantize_scores(std::vector<SpotPrediction> preds);

/// One JSON object per line: {"video","frame","class","score"} in rank order.
void write_predictions(const std::filesystem::path& path, const std::vector<SpotPrediction>& preds);
std::vector<SpotPrediction> read_predictions(const std::filesystem::path& path);

/// Sidecar describing how a prediction file was produced.
struct PredictionMeta {
  std::optional<int> nms_window;
  std::string split;
  std::vector<std::string> videos;
  int clip_len = 0;
  std::string checkpoint;
  std::string flow_checkpoint;
};

std::filesystem::path meta_path(const std::filesystem::path& predictions);
void write_prediction_meta(const std::filesystem::path& predictions, const PredictionMeta& meta);
std::optional<PredictionMeta> read_prediction_meta(const std::filesystem::path& predictions);

}  // namespace spotkit::inference
