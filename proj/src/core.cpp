#include "spotkit/core.hpp"

#include <algorithm>
#include <set>
#include <tuple>

namespace spotkit {

EventClassTable::EventClassTable(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw Error("class table must list at least one class");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw Error("class names must be non-empty");
    if (!seen.insert(n).second) throw Error("duplicate class name \"" + n + "\"");
  }
}

const std::string& EventClassTable::name(int class_id) const {
  if (!valid_id(class_id)) throw Error("unknown class id " + std::to_string(class_id));
  return names_[class_id - 1];
}

bool ranks_before(const SpotPrediction& a, const SpotPrediction& b) {
  return std::make_tuple(-a.score, a.frame, a.class_id) <
         std::make_tuple(-b.score, b.frame, b.class_id);
}

void sort_by_rank(std::vector<SpotPrediction>& preds) {
  std::stable_sort(preds.begin(), preds.end(), ranks_before);
}

DenseLabelSeq densify(const std::vector<EventLabel>& events, int num_frames, int num_classes) {
  if (num_frames < 1) throw Error("num_frames must be >= 1");
  if (num_classes < 1) throw Error("class count must be >= 1");
  DenseLabelSeq out;
  out.labels.assign(num_frames, kBackground);
  out.mask.assign(num_frames, 1);
  for (const auto& e : events) {
    if (e.frame < 0 || e.frame >= num_frames) {
      throw Error("event out of range: frame " + std::to_string(e.frame) + " not in [0, " +
                  std::to_string(num_frames) + ")");
    }
    if (e.class_id < 1 || e.class_id > num_classes) {
      throw Error("unknown class id " + std::to_string(e.class_id) + " at frame " +
                  std::to_string(e.frame));
    }
    if (out.labels[e.frame] != kBackground) {
      throw Error("duplicate event frame " + std::to_string(e.frame));
    }
    out.labels[e.frame] = e.class_id;
  }
  return out;
}

DenseLabelSeq dilate(const DenseLabelSeq& dense, int radius) {
  if (radius < 0) throw Error("dilation radius must be >= 0");
  if (dense.mask.size() != dense.labels.size()) throw Error("label/mask length mismatch");
  DenseLabelSeq out = dense;
  if (radius == 0) return out;
  const int n = dense.size();
  std::vector<int> best_dist(n, radius + 1);
  // Events are visited in ascending frame order, so a strict improvement test
  // leaves equidistant frames with the earlier event.
  for (int e = 0; e < n; ++e) {
    const int cls = dense.labels[e];
    if (cls == kBackground) continue;
    for (int t = std::max(0, e - radius); t <= std::min(n - 1, e + radius); ++t) {
      if (dense.labels[t] != kBackground || !dense.mask[t]) continue;
      const int d = std::abs(t - e);
      if (d < best_dist[t]) {
        best_dist[t] = d;
        out.labels[t] = cls;
      }
    }
  }
  return out;
}

std::vector<double> class_weights(int num_classes, double fg_weight) {
  if (num_classes < 1) throw Error("class count must be >= 1");
  if (!(fg_weight > 0.0)) throw Error("foreground weight must be > 0");
  std::vector<double> w(num_classes + 1, fg_weight);
  w[0] = 1.0;
  return w;
}

SoftLabelSeq to_soft(const DenseLabelSeq& dense, int num_classes) {
  SoftLabelSeq out;
  out.dist = RowMatrix::Zero(dense.size(), num_classes + 1);
  out.mask = dense.mask;
  for (int t = 0; t < dense.size(); ++t) {
    const int c = dense.labels[t];
    if (c < 0 || c > num_classes) throw Error("label out of range at frame " + std::to_string(t));
    out.dist(t, c) = 1.0;
  }
  return out;
}

std::vector<EventLabel> collect_events(const DenseLabelSeq& dense, const std::string& video_id) {
  std::vector<EventLabel> out;
  for (int t = 0; t < dense.size(); ++t) {
    if (dense.labels[t] != kBackground) out.push_back({video_id, t, dense.labels[t]});
  }
  return out;
}

}  // namespace spotkit
