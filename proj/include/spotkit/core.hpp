#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace spotkit {

/// Raised for malformed input, violated preconditions and artifact mismatches.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Class id 0 is background; foreground classes are 1..K.
inline constexpr int kBackground = 0;

/// Ordered foreground class names. names[i] has class id i + 1.
class EventClassTable {
 public:
  EventClassTable() = default;
  explicit EventClassTable(std::vector<std::string> names);

  int num_classes() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  /// Name of foreground class `class_id` (1-based).
  const std::string& name(int class_id) const;
  bool valid_id(int class_id) const { return class_id >= 1 && class_id <= num_classes(); }

 private:
  std::vector<std::string> names_;
};

struct VideoMeta {
  std::string id;
  double fps = 0.0;
  int num_frames = 0;
  std::string frame_source;
  /// Optional two-channel optical flow directory; empty when absent.
  std::string flow_source;
};

struct EventLabel {
  std::string video_id;
  int frame = 0;
  int class_id = 0;

  friend bool operator==(const EventLabel&, const EventLabel&) = default;
};

/// Hard per-frame targets. Masked-out frames carry the background label.
struct DenseLabelSeq {
  std::vector<int> labels;
  std::vector<std::uint8_t> mask;

  int size() const { return static_cast<int>(labels.size()); }
};

/// Per-frame target distributions over K + 1 classes (column 0 is background).
struct SoftLabelSeq {
  RowMatrix dist;
  std::vector<std::uint8_t> mask;

  int size() const { return static_cast<int>(dist.rows()); }
};

/// Per-frame class probabilities, N x (K + 1), column 0 is background.
struct ScoreSeq {
  RowMatrix scores;

  int size() const { return static_cast<int>(scores.rows()); }
  int num_classes() const { return static_cast<int>(scores.cols()) - 1; }
};

struct SpotPrediction {
  std::string video_id;
  int frame = 0;
  int class_id = 0;
  double score = 0.0;

  friend bool operator==(const SpotPrediction&, const SpotPrediction&) = default;
};

/// Global candidate ordering: score descending, then frame ascending, then class ascending.
bool ranks_before(const SpotPrediction& a, const SpotPrediction& b);
void sort_by_rank(std::vector<SpotPrediction>& preds);

/// Places each event's class on its frame; all other frames are background.
/// Events must lie in [0, num_frames) with at most one event per frame.
DenseLabelSeq densify(const std::vector<EventLabel>& events, int num_frames, int num_classes);

/// Propagates event labels to background frames within `radius`. A frame in
/// reach of several events takes the nearest one; equidistant ties go to the
/// earlier event.
DenseLabelSeq dilate(const DenseLabelSeq& dense, int radius);

/// Loss weight per class: 1 for background, `fg_weight` for each foreground class.
std::vector<double> class_weights(int num_classes, double fg_weight);

/// One-hot encoding of hard labels; mask is copied.
SoftLabelSeq to_soft(const DenseLabelSeq& dense, int num_classes);

/// Frames holding a non-background label, as events of `video_id`.
std::vector<EventLabel> collect_events(const DenseLabelSeq& dense, const std::string& video_id);

}  // namespace spotkit
