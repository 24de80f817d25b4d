#include "spotkit/cli.hpp"

#include "spotkit/data/manifest.hpp"
#include "spotkit/data/synthetic.hpp"
#include "spotkit/evaluation.hpp"
#include "spotkit/inference.hpp"
#include "spotkit/model.hpp"
#include "spotkit/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>

namespace spotkit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Checkpoint problems that are not plain usage errors.
class ArtifactMismatch : public Error {
 public:
  using Error::Error;
};

struct Global {
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string out;
};

void add_global(CLI::App* cmd, Global& g, bool out_required = true) {
  cmd->add_option("--seed", g.seed, "Random seed");
  cmd->add_flag("--deterministic", g.deterministic, "Single-worker, bit-reproducible run");
  auto* o = cmd->add_option("--out", g.out, "Output directory");
  if (out_required) o->required();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory " + out);
  return dir;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw Error(std::string(what) + " not found: " + path);
}

std::vector<std::string> split_videos(const data::DatasetManifest& manifest, const std::string& split) {
  std::vector<std::string> ids;
  if (split == "all") {
    for (const auto& v : manifest.videos()) ids.push_back(v.meta.id);
  } else {
    for (const auto* v : manifest.split(data::parse_split(split))) ids.push_back(v->meta.id);
  }
  if (ids.empty()) throw Error("split \"" + split + "\" has no videos");
  return ids;
}

std::string fmt(double x, const char* spec = "%.4f") {
  char buf[32];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

// ------------------------------------------------------------------- synth

struct SynthArgs {
  Global g;
  std::string config_file;
  data::SyntheticConfig cfg;
};

int cmd_synth(CLI::App& cmd, SynthArgs& a, std::ostream& out) {
  data::SyntheticConfig cfg;
  if (!a.config_file.empty()) {
    require_file(a.config_file, "config file");
    std::ifstream is(a.config_file);
    json j;
    try {
      is >> j;
      cfg = j.get<data::SyntheticConfig>();
    } catch (const json::exception& e) {
      throw Error("invalid config file " + a.config_file + ": " + e.what());
    }
  }
  // Flags given on the command line override the config file.
  auto given = [&](const char* name) { return cmd.get_option(name)->count() > 0; };
  if (given("--videos")) cfg.num_videos = a.cfg.num_videos;
  if (given("--frames")) cfg.frames_per_video = a.cfg.frames_per_video;
  if (given("--height")) cfg.frame_height = a.cfg.frame_height;
  if (given("--width")) cfg.frame_width = a.cfg.frame_width;
  if (given("--fps")) cfg.fps = a.cfg.fps;
  if (given("--radius")) cfg.ball_radius = a.cfg.ball_radius;
  if (given("--gravity")) cfg.gravity = a.cfg.gravity;
  if (given("--speed-min")) cfg.speed_min = a.cfg.speed_min;
  if (given("--speed-max")) cfg.speed_max = a.cfg.speed_max;
  if (given("--vspeed-max")) cfg.vertical_speed_max = a.cfg.vertical_speed_max;
  if (given("--with-flow")) cfg.with_flow = true;
  if (given("--seed")) cfg.seed = a.g.seed;
  cfg.validate();

  const fs::path dir = prepare_out(a.g.out);
  const auto manifest = data::generate_synthetic(cfg, dir);
  write_json(dir / "run_config.json", {{"command", "synth"}, {"synthetic", cfg}, {"out", a.g.out}});

  out << "manifest: " << (dir / "manifest.json").string() << "\n";
  std::map<int, int> hist;
  for (const auto& e : manifest.events()) ++hist[e.class_id];
  for (int c = 1; c <= manifest.num_classes(); ++c) {
    out << "  " << manifest.classes().name(c) << ": " << hist[c] << "\n";
  }
  return kOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  Global g;
  std::string manifest;
  std::string shift = "gsm";
  std::string head = "bigru";
  std::string modality = "rgb";
  training::TrainConfig cfg;
};

int cmd_train(TrainArgs& a, std::ostream& out) {
  require_file(a.manifest, "manifest");
  const auto manifest = data::load_manifest(a.manifest);

  training::TrainConfig cfg = a.cfg;
  cfg.seed = a.g.seed;
  cfg.deterministic = a.g.deterministic;
  cfg.modality = data::parse_modality(a.modality);
  cfg.validate();

  BackboneConfig bb = default_backbone();
  bb.shift_mode = nn::parse_shift_mode(a.shift);
  if (cfg.modality == data::Modality::kFlow) bb.in_channels = 2;
  HeadConfig hc;
  hc.kind = nn::parse_head_kind(a.head);
  hc.num_classes = manifest.num_classes();

  const fs::path dir = prepare_out(a.g.out);
  write_json(dir / "run_config.json", {{"command", "train"},
                                       {"manifest", a.manifest},
                                       {"backbone", bb},
                                       {"head", hc},
                                       {"train", cfg},
                                       {"out", a.g.out}});

  SpotModel<float> model(bb, hc);
  model.init(cfg.seed);
  data::FrameStore frames(manifest, cfg.modality);
  training::TrainOptions opts;
  opts.out_dir = dir;
  opts.on_cycle = [&](const training::CycleLog& r) {
    out << "cycle " << r.cycle << "  loss " << fmt(r.mean_loss) << "  lr " << fmt(r.lr, "%.3g") << "  val mAP@1 "
        << fmt(r.val_map) << "\n"
        << std::flush;
  };
  const auto result = training::train(manifest, frames, model, cfg, opts);
  out << "best cycle " << result.best_cycle << " (val mAP@1 " << fmt(result.best_val_map) << ")\n";
  out << "checkpoint: " << result.checkpoint.string() << "\n";
  return kOk;
}

// ------------------------------------------------------------------- infer

struct InferArgs {
  Global g;
  std::string manifest;
  std::string checkpoint;
  std::string flow_checkpoint;
  std::string split = "test";
  std::string nms_window = "1";
  int clip_len = 0;
  double min_score = 0.0;
};

struct Stream {
  LoadedModel loaded;
  data::Modality modality = data::Modality::kRgb;
  int clip_len = 0;
};

Stream load_stream(const std::string& path, const data::DatasetManifest& manifest, int clip_len,
                   std::optional<data::Modality> expect = std::nullopt) {
  require_file(path, "checkpoint");
  Stream s;
  try {
    s.loaded = load_checkpoint(path);
  } catch (const Error& e) {
    throw ArtifactMismatch(path + ": " + e.what());
  }
  const auto& tc = s.loaded.meta.train_config;
  try {
    s.modality = data::parse_modality(tc.value("modality", std::string("rgb")));
  } catch (const Error& e) {
    throw ArtifactMismatch(path + ": " + e.what());
  }
  if (expect && s.modality != *expect) {
    throw ArtifactMismatch(path + ": checkpoint was trained on " + data::to_string(s.modality) + ", expected " +
                           data::to_string(*expect));
  }
  if (s.loaded.model->num_classes() != manifest.num_classes()) {
    throw ArtifactMismatch(path + ": checkpoint has " + std::to_string(s.loaded.model->num_classes()) +
                           " classes, manifest has " + std::to_string(manifest.num_classes()));
  }
  const int want = s.modality == data::Modality::kFlow ? 2 : 3;
  if (s.loaded.model->backbone_config().in_channels != want) {
    throw ArtifactMismatch(path + ": input channels do not match modality " + data::to_string(s.modality));
  }
  s.clip_len = clip_len > 0 ? clip_len : tc.value("clip_len", 100);
  if (s.clip_len % 2) ++s.clip_len;
  return s;
}

std::optional<int> parse_nms(const std::string& s) {
  if (s == "off") return std::nullopt;
  try {
    std::size_t pos = 0;
    const int w = std::stoi(s, &pos);
    if (pos == s.size() && w >= 0) return w;
  } catch (const std::exception&) {
  }
  throw Error("--nms-window must be \"off\" or a non-negative integer, got \"" + s + "\"");
}

int cmd_infer(InferArgs& a, std::ostream& out) {
  const auto nms_window = parse_nms(a.nms_window);
  if (a.clip_len < 0) throw Error("--clip-len must be positive");
  require_file(a.manifest, "manifest");
  const auto manifest = data::load_manifest(a.manifest);
  const auto videos = split_videos(manifest, a.split);

  Stream rgb = load_stream(a.checkpoint, manifest, a.clip_len);
  std::optional<Stream> flow;
  if (!a.flow_checkpoint.empty()) flow = load_stream(a.flow_checkpoint, manifest, a.clip_len, data::Modality::kFlow);

  const fs::path dir = prepare_out(a.g.out);
  write_json(dir / "run_config.json", {{"command", "infer"},
                                       {"manifest", a.manifest},
                                       {"checkpoint", a.checkpoint},
                                       {"flow_checkpoint", a.flow_checkpoint},
                                       {"split", a.split},
                                       {"nms_window", nms_window ? json(*nms_window) : json("off")},
                                       {"clip_len", rgb.clip_len},
                                       {"min_score", a.min_score},
                                       {"seed", a.g.seed},
                                       {"deterministic", a.g.deterministic},
                                       {"out", a.g.out}});

  data::FrameStore rgb_frames(manifest, rgb.modality);
  std::optional<data::FrameStore> flow_frames;
  if (flow) flow_frames.emplace(manifest, flow->modality);

  std::vector<SpotPrediction> preds;
  for (const auto& id : videos) {
    ScoreSeq scores = inference::predict_video(*rgb.loaded.model, rgb_frames.get(id), rgb.clip_len);
    if (flow) {
      const ScoreSeq f = inference::predict_video(*flow->loaded.model, flow_frames->get(id), flow->clip_len);
      scores = inference::ensemble(scores, f);
    }
    auto p = inference::scores_to_predictions(scores, id, a.min_score);
    if (nms_window) p = inference::nms(p, *nms_window);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  preds = inference::quantize_scores(std::move(preds));

  const fs::path pred_path = dir / "predictions.jsonl";
  inference::write_predictions(pred_path, preds);
  inference::PredictionMeta meta;
  meta.nms_window = nms_window;
  meta.split = a.split;
  meta.videos = videos;
  meta.clip_len = rgb.clip_len;
  meta.checkpoint = a.checkpoint;
  meta.flow_checkpoint = a.flow_checkpoint;
  inference::write_prediction_meta(pred_path, meta);

  out << preds.size() << " predictions on " << videos.size() << " videos";
  out << (nms_window ? " (nms window " + std::to_string(*nms_window) + ")" : std::string(" (no nms)")) << "\n";
  out << "predictions: " << pred_path.string() << "\n";
  return kOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  Global g;
  std::string manifest;
  std::string predictions;
  std::string split;
  std::vector<int> deltas{1, 2};
  std::vector<double> tolerances_sec;
  std::string pr_out;
};

std::string file_token(const std::string& name) {
  std::string s;
  for (char c : name) s += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return s;
}

int cmd_eval(EvalArgs& a, std::ostream& out) {
  require_file(a.manifest, "manifest");
  require_file(a.predictions, "predictions");
  const auto manifest = data::load_manifest(a.manifest);
  const auto preds = inference::read_predictions(a.predictions);
  const auto meta = inference::read_prediction_meta(a.predictions);

  std::vector<std::string> videos;
  std::string video_source = "all";
  if (!a.split.empty()) {
    videos = split_videos(manifest, a.split);
    video_source = "split " + a.split;
  } else if (meta && !meta->videos.empty()) {
    videos = meta->videos;
    video_source = "prediction sidecar";
  } else {
    videos = split_videos(manifest, "all");
  }

  auto report = evaluation::map_at_deltas(preds, manifest, a.deltas, videos);
  if (meta) {
    report.nms_known = true;
    report.nms_window = meta->nms_window;
  }
  json j = report.to_json();
  j["videos_from"] = video_source;
  std::optional<double> avg_sec;
  if (!a.tolerances_sec.empty()) {
    avg_sec = evaluation::average_map_seconds(preds, manifest, a.tolerances_sec, videos);
    j["tolerances_sec"] = a.tolerances_sec;
    j["average_mAP_sec"] = *avg_sec;
  }

  const fs::path dir = prepare_out(a.g.out);
  write_json(dir / "run_config.json", {{"command", "eval"},
                                       {"manifest", a.manifest},
                                       {"predictions", a.predictions},
                                       {"split", a.split},
                                       {"deltas", a.deltas},
                                       {"tolerances_sec", a.tolerances_sec},
                                       {"pr_out", a.pr_out},
                                       {"seed", a.g.seed},
                                       {"deterministic", a.g.deterministic},
                                       {"out", a.g.out}});
  write_json(dir / "report.json", j);

  if (!a.pr_out.empty()) {
    const fs::path pr_dir = prepare_out(a.pr_out);
    const std::set<std::string> selected(videos.begin(), videos.end());
    std::vector<EventLabel> gts;
    for (const auto& e : manifest.events())
      if (selected.count(e.video_id)) gts.push_back(e);
    for (int c = 1; c <= manifest.num_classes(); ++c) {
      for (int d : a.deltas) {
        const auto name = "pr_" + file_token(manifest.classes().name(c)) + "_d" + std::to_string(d) + ".csv";
        evaluation::write_pr_csv(pr_dir / name, evaluation::pr_points(preds, gts, c, d));
      }
    }
  }

  // Table: one row per class, one column per delta.
  out << "class";
  for (int d : a.deltas) out << "\tAP@" << d;
  out << "\n";
  for (const auto& c : report.classes) {
    out << c.name;
    for (const auto& ap : c.ap) out << "\t" << (ap ? fmt(*ap) : std::string("n/a"));
    out << "\n";
  }
  out << "mAP";
  for (double m : report.map) out << "\t" << fmt(m);
  out << "\n";
  if (avg_sec) out << "average mAP over second tolerances: " << fmt(*avg_sec) << "\n";
  out << "nms: " << (!meta ? std::string("unknown") : meta->nms_window ? "window " + std::to_string(*meta->nms_window) : "off")
      << "\n";
  out << "report: " << (dir / "report.json").string() << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Precise event spotting: synthetic data, training, inference and evaluation", "spotkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic bouncing-ball benchmark");
  add_global(synth, sa.g);
  synth->add_option("--config", sa.config_file, "JSON synthetic config; flags override it");
  synth->add_option("--videos", sa.cfg.num_videos);
  synth->add_option("--frames", sa.cfg.frames_per_video);
  synth->add_option("--height", sa.cfg.frame_height);
  synth->add_option("--width", sa.cfg.frame_width);
  synth->add_option("--fps", sa.cfg.fps);
  synth->add_option("--radius", sa.cfg.ball_radius);
  synth->add_option("--gravity", sa.cfg.gravity);
  synth->add_option("--speed-min", sa.cfg.speed_min);
  synth->add_option("--speed-max", sa.cfg.speed_max);
  synth->add_option("--vspeed-max", sa.cfg.vertical_speed_max);
  synth->add_flag("--with-flow", sa.cfg.with_flow, "Also write optical flow fields");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model end to end");
  add_global(train, ta.g);
  train->add_option("--manifest", ta.manifest)->required();
  train->add_option("--clip-len", ta.cfg.clip_len, "Frames per training clip")->capture_default_str();
  train->add_option("--batch", ta.cfg.batch_clips, "Clips per step")->capture_default_str();
  train->add_option("--cycles", ta.cfg.num_cycles)->capture_default_str();
  train->add_option("--steps-per-cycle", ta.cfg.steps_per_cycle)->capture_default_str();
  train->add_option("--warmup", ta.cfg.warmup_cycles, "Linear warmup cycles")->capture_default_str();
  train->add_option("--lr", ta.cfg.base_lr)->capture_default_str();
  train->add_option("--weight-decay", ta.cfg.weight_decay)->capture_default_str();
  train->add_option("--shift", ta.shift)->check(CLI::IsMember({"gsm", "tsm", "none"}))->capture_default_str();
  train->add_option("--head", ta.head)
      ->check(CLI::IsMember({"bigru", "bigru_deep3", "grustar", "linear"}))
      ->capture_default_str();
  train->add_option("--fg-weight", ta.cfg.fg_weight)->capture_default_str();
  train->add_option("--dilate", ta.cfg.dilate_radius, "Label dilation radius")->capture_default_str();
  train->add_option("--mixup", ta.cfg.mixup_alpha, "Beta(a, a) mixup; 0 disables")->capture_default_str();
  train->add_option("--crop-width", ta.cfg.crop_width, "0 keeps the full width")->capture_default_str();
  train->add_option("--jitter", ta.cfg.jitter_strength)->capture_default_str();
  train->add_option("--blur", ta.cfg.blur_probability)->capture_default_str();
  train->add_option("--val-videos", ta.cfg.val_max_videos, "Cap on validation videos (0 = all)")
      ->capture_default_str();
  train->add_option("--modality", ta.modality)->check(CLI::IsMember({"rgb", "flow"}))->capture_default_str();

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Predict events with a trained checkpoint");
  add_global(infer, ia.g);
  infer->add_option("--manifest", ia.manifest)->required();
  infer->add_option("--checkpoint", ia.checkpoint)->required();
  infer->add_option("--flow-checkpoint", ia.flow_checkpoint, "Second stream to average with");
  infer->add_option("--split", ia.split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  infer->add_option("--nms-window", ia.nms_window, "\"off\" or a frame radius")->capture_default_str();
  infer->add_option("--clip-len", ia.clip_len, "Window length (default: training clip length)");
  infer->add_option("--min-score", ia.min_score)->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score predictions with mAP at frame tolerances");
  add_global(eval, ea.g);
  eval->add_option("--manifest", ea.manifest)->required();
  eval->add_option("--predictions", ea.predictions)->required();
  eval->add_option("--deltas", ea.deltas, "Frame tolerances")->delimiter(',')->capture_default_str();
  eval->add_option("--tolerances-sec", ea.tolerances_sec, "Second-scale tolerances to average over")
      ->delimiter(',');
  eval->add_option("--pr-out", ea.pr_out, "Directory for per-class PR curves");
  eval->add_option("--split", ea.split, "Override the evaluated video set")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(*synth, sa, out);
    if (*train) return cmd_train(ta, out);
    if (*infer) return cmd_infer(ia, out);
    if (*eval) return cmd_eval(ea, out);
  } catch (const training::TrainingDiverged& e) {
    err << "error: " << e.what() << "\n";
    return kTrainingFailure;
  } catch (const ArtifactMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kMismatch;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace spotkit::cli
