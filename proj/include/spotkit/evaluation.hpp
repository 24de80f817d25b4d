#pragma once

#include "spotkit/core.hpp"
#include "spotkit/data/manifest.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spotkit::evaluation {

/// Greedy matching for one (video, class): predictions in rank order, each
/// taking the nearest unmatched event within |frame difference| <= delta (ties
/// to the lower event frame). Returns a TP flag per prediction.
std::vector<bool> match_predictions(const std::vector<SpotPrediction>& preds, const std::vector<int>& gt_frames,
                                    int delta);

/// AP of one class across videos; `preds` and `gts` may span many videos and
/// must already be restricted to one class. Undefined (nullopt) when there
/// are neither events nor predictions.
std::optional<double> average_precision(const std::vector<SpotPrediction>& preds, const std::vector<EventLabel>& gts,
                                        int delta);

struct PrPoint {
  double recall = 0;
  double precision = 0;
  double interp_precision = 0;
};

/// Rank-by-rank precision/recall of one class plus the monotone envelope.
std::vector<PrPoint> pr_points(const std::vector<SpotPrediction>& preds, const std::vector<EventLabel>& gts,
                               int class_id, int delta);
void write_pr_csv(const std::filesystem::path& path, const std::vector<PrPoint>& points);

struct ClassResult {
  int class_id = 0;
  std::string name;
  int num_events = 0;
  int num_predictions = 0;
  std::vector<std::optional<double>> ap;  // one per delta
};

struct EvalReport {
  std::vector<int> deltas;
  std::vector<ClassResult> classes;
  std::vector<double> map;  // one per delta
  std::vector<std::string> videos;
  std::optional<int> nms_window;
  bool nms_known = false;

  double map_at(int delta) const;
  nlohmann::json to_json() const;
};

/// Videos evaluated: `videos`, or every manifest video when empty. Predictions
/// for other videos, unknown videos or unknown classes are rejected.
EvalReport map_at_deltas(const std::vector<SpotPrediction>& preds, const data::DatasetManifest& manifest,
                         const std::vector<int>& deltas, const std::vector<std::string>& videos = {});

/// round-half-up(fps * seconds / 2)
int tolerance_radius(double fps, double seconds);

/// Mean of mAP over second-scale tolerances, each mapped to a frame radius.
double average_map_seconds(const std::vector<SpotPrediction>& preds, const data::DatasetManifest& manifest,
                           const std::vector<double>& tolerances_sec, const std::vector<std::string>& videos = {});

}  // namespace spotkit::evaluation
