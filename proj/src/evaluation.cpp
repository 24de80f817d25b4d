#include "spotkit/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

namespace spotkit::evaluation {

using nlohmann::json;

std::vector<bool> match_predictions(const std::vector<SpotPrediction>& preds, const std::vector<int>& gt_frames,
                                    int delta) {
  if (delta < 0) throw Error("tolerance must be >= 0");
  std::vector<int> gts = gt_frames;
  std::sort(gts.begin(), gts.end());
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> tp(preds.size(), false);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int f = preds[i].frame;
    // Candidates lie in [f - delta, f + delta]; scanning in ascending frame
    // order with a strict improvement test keeps the lower frame on ties.
    auto it = std::lower_bound(gts.begin(), gts.end(), f - delta);
    std::ptrdiff_t best = -1;
    for (; it != gts.end() && *it <= f + delta; ++it) {
      const auto j = it - gts.begin();
      if (used[static_cast<std::size_t>(j)]) continue;
      if (best < 0 || std::abs(*it - f) < std::abs(gts[static_cast<std::size_t>(best)] - f)) best = j;
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      tp[i] = true;
    }
  }
  return tp;
}

namespace {

// TP flags of `preds` (already in rank order), matched per video.
std::vector<bool> match_all(const std::vector<SpotPrediction>& preds, const std::vector<EventLabel>& gts, int delta) {
  std::map<std::string, std::vector<int>> gt_by_video;
  for (const auto& g : gts) gt_by_video[g.video_id].push_back(g.frame);
  std::map<std::string, std::vector<std::size_t>> idx_by_video;
  for (std::size_t i = 0; i < preds.size(); ++i) idx_by_video[preds[i].video_id].push_back(i);
  std::vector<bool> tp(preds.size(), false);
  for (const auto& [video, idx] : idx_by_video) {
    std::vector<SpotPrediction> sub;
    for (std::size_t i : idx) sub.push_back(preds[i]);
    auto it = gt_by_video.find(video);
    const auto flags = match_predictions(sub, it == gt_by_video.end() ? std::vector<int>{} : it->second, delta);
    for (std::size_t k = 0; k < idx.size(); ++k) tp[idx[k]] = flags[k];
  }
  return tp;
}

std::vector<PrPoint> curve(std::vector<SpotPrediction> preds, const std::vector<EventLabel>& gts, int delta) {
  sort_by_rank(preds);
  const auto tp = match_all(preds, gts, delta);
  std::vector<PrPoint> pts(preds.size());
  const double total = static_cast<double>(gts.size());
  int hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    hits += tp[i] ? 1 : 0;
    pts[i].recall = total > 0 ? hits / total : 0.0;
    pts[i].precision = static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  double env = 0;
  for (std::size_t i = pts.size(); i-- > 0;) {
    env = std::max(env, pts[i].precision);
    pts[i].interp_precision = env;
  }
  return pts;
}

}  // namespace

std::optional<double> average_precision(const std::vector<SpotPrediction>& preds, const std::vector<EventLabel>& gts,
                                        int delta) {
  if (gts.empty()) {
    if (preds.empty()) return std::nullopt;
    return 0.0;
  }
  const auto pts = curve(preds, gts, delta);
  double ap = 0, prev_recall = 0;
  for (const auto& p : pts) {
    ap += (p.recall - prev_recall) * p.interp_precision;
    prev_recall = p.recall;
  }
  return ap;
}

std::vector<PrPoint> pr_points(const std::vector<SpotPrediction>& preds, const std::vector<EventLabel>& gts,
                               int class_id, int delta) {
  std::vector<SpotPrediction> p;
  for (const auto& x : preds)
    if (x.class_id == class_id) p.push_back(x);
  std::vector<EventLabel> g;
  for (const auto& x : gts)
    if (x.class_id == class_id) g.push_back(x);
  return curve(std::move(p), g, delta);
}

void write_pr_csv(const std::filesystem::path& path, const std::vector<PrPoint>& points) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "recall,precision,interp_precision\n";
  char row[96];
  for (const auto& p : points) {
    std::snprintf(row, sizeof(row), "%.6f,%.6f,%.6f\n", p.recall, p.precision, p.interp_precision);
    os << row;
  }
}

double EvalReport::map_at(int delta) const {
  for (std::size_t i = 0; i < deltas.size(); ++i)
    if (deltas[i] == delta) return map[i];
  throw Error("report has no mAP at tolerance " + std::to_string(delta));
}

json EvalReport::to_json() const {
  json j;
  j["deltas"] = deltas;
  json cls = json::array();
  for (const auto& c : classes) {
    json ap = json::object();
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      ap[std::to_string(deltas[i])] = c.ap[i] ? json(*c.ap[i]) : json(nullptr);
    }
    cls.push_back({{"class", c.class_id},
                   {"name", c.name},
                   {"num_events", c.num_events},
                   {"num_predictions", c.num_predictions},
                   {"ap", ap}});
  }
  j["classes"] = cls;
  json m = json::object();
  for (std::size_t i = 0; i < deltas.size(); ++i) m[std::to_string(deltas[i])] = map[i];
  j["mAP"] = m;
  j["matching"] = {{"rule", "greedy by score, nearest unmatched event, ties to the lower frame"},
                   {"interpolation", "all-point"}};
  j["num_videos"] = videos.size();
  j["nms_applied"] = nms_known ? json(nms_window.has_value()) : json(nullptr);
  j["nms_window"] = nms_window ? json(*nms_window) : json(nullptr);
  const bool has_zero = std::find(deltas.begin(), deltas.end(), 0) != deltas.end();
  j["delta_zero_caveat"] = has_zero;
  if (has_zero) j["caveat"] = "delta 0 is sensitive to annotation ambiguity of one frame";
  return j;
}

namespace {

std::vector<std::string> resolve_videos(const data::DatasetManifest& manifest, const std::vector<std::string>& videos) {
  if (!videos.empty()) {
    for (const auto& v : videos)
      if (!manifest.has_video(v)) throw Error("unknown video \"" + v + "\"");
    return videos;
  }
  std::vector<std::string> all;
  for (const auto& v : manifest.videos()) all.push_back(v.meta.id);
  return all;
}

void check_predictions(const std::vector<SpotPrediction>& preds, const data::DatasetManifest& manifest,
                       const std::set<std::string>& selected) {
  for (const auto& p : preds) {
    const std::string rec = "prediction (video \"" + p.video_id + "\", frame " + std::to_string(p.frame) +
                            ", class " + std::to_string(p.class_id) + ")";
    if (!manifest.has_video(p.video_id)) throw Error(rec + " references an unknown video");
    if (!selected.count(p.video_id)) throw Error(rec + " references a video outside the evaluated set");
    if (!manifest.classes().valid_id(p.class_id)) throw Error(rec + " references an unknown class");
    if (p.frame < 0 || p.frame >= manifest.video(p.video_id).meta.num_frames) throw Error(rec + " is out of range");
  }
}

}  // namespace

EvalReport map_at_deltas(const std::vector<SpotPrediction>& preds, const data::DatasetManifest& manifest,
                         const std::vector<int>& deltas, const std::vector<std::string>& videos) {
  if (deltas.empty()) throw Error("at least one tolerance is required");
  for (int d : deltas)
    if (d < 0) throw Error("tolerance must be >= 0");
  EvalReport report;
  report.deltas = deltas;
  report.videos = resolve_videos(manifest, videos);
  const std::set<std::string> selected(report.videos.begin(), report.videos.end());
  check_predictions(preds, manifest, selected);
  const int k = manifest.num_classes();
  std::vector<std::vector<SpotPrediction>> by_class(static_cast<std::size_t>(k + 1));
  std::vector<std::vector<EventLabel>> gts(static_cast<std::size_t>(k + 1));
  for (const auto& p : preds) by_class[static_cast<std::size_t>(p.class_id)].push_back(p);
  for (const auto& e : manifest.events())
    if (selected.count(e.video_id)) gts[static_cast<std::size_t>(e.class_id)].push_back(e);
  report.map.assign(deltas.size(), 0.0);
  std::vector<int> defined(deltas.size(), 0);
  for (int c = 1; c <= k; ++c) {
    ClassResult r;
    r.class_id = c;
    r.name = manifest.classes().name(c);
    r.num_events = static_cast<int>(gts[static_cast<std::size_t>(c)].size());
    r.num_predictions = static_cast<int>(by_class[static_cast<std::size_t>(c)].size());
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      r.ap.push_back(average_precision(by_class[static_cast<std::size_t>(c)], gts[static_cast<std::size_t>(c)], deltas[i]));
      if (r.ap.back()) {
        report.map[i] += *r.ap.back();
        ++defined[i];
      }
    }
    report.classes.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < deltas.size(); ++i) report.map[i] = defined[i] ? report.map[i] / defined[i] : 0.0;
  return report;
}

int tolerance_radius(double fps, double seconds) {
  if (!(fps > 0) || seconds < 0) throw Error("invalid tolerance");
  return static_cast<int>(std::floor(fps * seconds / 2.0 + 0.5));
}

double average_map_seconds(const std::vector<SpotPrediction>& preds, const data::DatasetManifest& manifest,
                           const std::vector<double>& tolerances_sec, const std::vector<std::string>& videos) {
  if (tolerances_sec.empty()) throw Error("at least one tolerance is required");
  const auto ids = resolve_videos(manifest, videos);
  double fps = 0;
  for (const auto& id : ids) {
    const double f = manifest.video(id).meta.fps;
    if (fps == 0) fps = f;
    if (f != fps) throw Error("videos have mixed frame rates (" + std::to_string(fps) + " vs " + std::to_string(f) + ")");
  }
  std::vector<int> radii;
  for (double s : tolerances_sec) radii.push_back(tolerance_radius(fps, s));
  const EvalReport r = map_at_deltas(preds, manifest, radii, ids);
  double sum = 0;
  for (double m : r.map) sum += m;
  return sum / static_cast<double>(r.map.size());
}

}  // namespace spotkit::evaluation
