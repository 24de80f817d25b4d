#include "spotkit/inference.hpp"

#include "spotkit/data/clip.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace spotkit::inference {

using nlohmann::json;

WindowPlan plan_windows(int num_frames, int clip_len) {
  if (clip_len < 2 || clip_len % 2 != 0) throw Error("clip length must be even and >= 2");
  if (num_frames < 1) throw Error("video has no frames");
  WindowPlan plan;
  plan.clip_len = clip_len;
  const int stride = clip_len / 2;
  for (int s = 0; s + clip_len <= num_frames; s += stride) plan.starts.push_back(s);
  if (plan.starts.empty()) {
    plan.starts.push_back(0);
  } else if (plan.starts.back() + clip_len < num_frames) {
    plan.starts.push_back(std::max(0, num_frames - clip_len));
  }
  return plan;
}

ScoreSeq average_scores(const std::vector<WindowScores>& windows, int num_frames) {
  if (windows.empty()) throw Error("no windows to average");
  const Eigen::Index cols = windows.front().scores.scores.cols();
  RowMatrix sum = RowMatrix::Zero(num_frames, cols);
  std::vector<int> count(static_cast<std::size_t>(num_frames), 0);
  for (const auto& w : windows) {
    if (w.scores.scores.cols() != cols) throw Error("window class counts differ");
    for (int i = 0; i < w.scores.size(); ++i) {
      const int t = w.start + i;
      if (t < 0 || t >= num_frames) continue;
      if (!w.mask.empty() && !w.mask[static_cast<std::size_t>(i)]) continue;
      sum.row(t) += w.scores.scores.row(i);
      ++count[static_cast<std::size_t>(t)];
    }
  }
  for (int t = 0; t < num_frames; ++t) {
    const int c = count[static_cast<std::size_t>(t)];
    if (c == 0) throw Error("frame " + std::to_string(t) + " is not covered by any window");
    sum.row(t) /= static_cast<double>(c);
  }
  return ScoreSeq{std::move(sum)};
}

std::vector<SpotPrediction> scores_to_predictions(const ScoreSeq& scores, const std::string& video_id,
                                                  double min_score) {
  std::vector<SpotPrediction> out;
  for (int t = 0; t < scores.size(); ++t)
    for (int c = 1; c < scores.scores.cols(); ++c) {
      const double s = scores.scores(t, c);
      if (s >= min_score) out.push_back({video_id, t, c, s});
    }
  sort_by_rank(out);
  return out;
}

std::vector<SpotPrediction> nms(const std::vector<SpotPrediction>& preds, int window) {
  if (window < 0) throw Error("NMS window must be >= 0");
  std::vector<SpotPrediction> sorted = preds;
  sort_by_rank(sorted);
  std::map<std::pair<std::string, int>, std::vector<int>> kept_frames;
  std::vector<SpotPrediction> out;
  for (const auto& p : sorted) {
    auto& kept = kept_frames[{p.video_id, p.class_id}];
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](int f) { return std::abs(f - p.frame) <= window; });
    if (suppressed) continue;
    kept.push_back(p.frame);
    out.push_back(p);
  }
  return out;
}

ScoreSeq ensemble(const ScoreSeq& a, const ScoreSeq& b) {
  if (a.scores.rows() != b.scores.rows() || a.scores.cols() != b.scores.cols()) {
    throw Error("ensemble requires score sequences of equal shape");
  }
  return ScoreSeq{RowMatrix(0.5 * (a.scores + b.scores))};
}

nn::Tensor<float> preprocess_flow(const nn::Tensor<float>& flow) {
  if (flow.c != 2) throw Error("flow must have two channels");
  nn::Tensor<float> out = flow;
  data::preprocess_flow(out.v.data(), out.n, out.h, out.w);
  return out;
}

ScoreSeq predict_video(const SpotModel<float>& model, const data::VideoData& video, int clip_len) {
  const WindowPlan plan = plan_windows(video.num_frames, clip_len);
  const int k = model.num_classes();
  std::vector<WindowScores> windows;
  for (int start : plan.starts) {
    data::Clip clip = data::extract_clip(video, DenseLabelSeq{}, k, start, clip_len);
    WindowScores w;
    w.start = start;
    w.scores = model.predict(clip.frames);
    w.mask = clip.labels.mask;
    windows.push_back(std::move(w));
  }
  return average_scores(windows, video.num_frames);
}

long strided_window_evaluations(int num_frames, int window) {
  if (window < 1) throw Error("window must be >= 1");
  return static_cast<long>(num_frames) * window;
}

namespace {

double round6(double s) { return std::round(s * 1e6) / 1e6; }

}  // namespace

std::vector<SpotPrediction> quantize_scores(std::vector<SpotPrediction> preds) {
  for (auto& p : preds) p.score = round6(p.score);
  sort_by_rank(preds);
  return preds;
}

void write_predictions(const std::filesystem::path& path, const std::vector<SpotPrediction>& preds) {
  const auto q = quantize_scores(preds);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  char score[32];
  for (const auto& p : q) {
    std::snprintf(score, sizeof(score), "%.6f", p.score);
    os << "{\"video\":" << json(p.video_id).dump() << ",\"frame\":" << p.frame << ",\"class\":" << p.class_id
       << ",\"score\":" << score << "}\n";
  }
  if (!os) throw Error("failed writing " + path.string());
}

std::vector<SpotPrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open predictions " + path.string());
  std::vector<SpotPrediction> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("video").get<std::string>(), j.at("frame").get<int>(), j.at("class").get<int>(),
                     j.at("score").get<double>()});
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed prediction record");
    }
  }
  return out;
}

std::filesystem::path meta_path(const std::filesystem::path& predictions) {
  return std::filesystem::path(predictions.string() + ".meta.json");
}

void write_prediction_meta(const std::filesystem::path& predictions, const PredictionMeta& meta) {
  json j;
  j["nms_window"] = meta.nms_window ? json(*meta.nms_window) : json(nullptr);
  j["split"] = meta.split;
  j["videos"] = meta.videos;
  j["clip_len"] = meta.clip_len;
  j["checkpoint"] = meta.checkpoint;
  j["flow_checkpoint"] = meta.flow_checkpoint;
  std::ofstream os(meta_path(predictions));
  if (!os) throw Error("cannot write " + meta_path(predictions).string());
  os << j.dump(1) << "\n";
}

std::optional<PredictionMeta> read_prediction_meta(const std::filesystem::path& predictions) {
  const auto p = meta_path(predictions);
  if (!std::filesystem::exists(p)) return std::nullopt;
  std::ifstream is(p);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error&) {
    throw Error("malformed prediction metadata " + p.string());
  }
  PredictionMeta m;
  if (j.contains("nms_window") && !j["nms_window"].is_null()) m.nms_window = j["nms_window"].get<int>();
  m.split = j.value("split", "");
  m.videos = j.value("videos", std::vector<std::string>{});
  m.clip_len = j.value("clip_len", 0);
  m.checkpoint = j.value("checkpoint", "");
  m.flow_checkpoint = j.value("flow_checkpoint", "");
  return m;
}

}  // namespace spotkit::inference
