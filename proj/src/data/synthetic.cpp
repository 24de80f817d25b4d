#include "spotkit/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

namespace spotkit::data {

using nlohmann::json;

void SyntheticConfig::validate() const {
  if (num_videos < 1) throw Error("synthetic: num_videos must be >= 1");
  if (frames_per_video < 1) throw Error("synthetic: frames_per_video must be >= 1");
  if (frame_height < 1 || frame_width < 1) throw Error("synthetic: frame size must be positive");
  if (!(fps > 0)) throw Error("synthetic: fps must be > 0");
  if (!(ball_radius > 0)) throw Error("synthetic: ball radius must be > 0");
  if (2 * ball_radius >= frame_width || 2 * ball_radius >= frame_height) {
    throw Error("synthetic: impossible geometry, a ball of radius " + std::to_string(ball_radius) +
                " does not fit in a " + std::to_string(frame_width) + "x" + std::to_string(frame_height) + " frame");
  }
  if (!(gravity >= 0)) throw Error("synthetic: gravity must be >= 0");
  if (!(speed_min > 0) || speed_max < speed_min) throw Error("synthetic: need 0 < speed_min <= speed_max");
  if (speed_max >= frame_width - 2 * ball_radius) {
    throw Error("synthetic: impossible geometry, horizontal speed exceeds the free width");
  }
  if (!(vertical_speed_max >= 0)) throw Error("synthetic: vertical_speed_max must be >= 0");
}

void to_json(json& j, const SyntheticConfig& c) {
  j = json{{"num_videos", c.num_videos},
           {"frames_per_video", c.frames_per_video},
           {"frame_height", c.frame_height},
           {"frame_width", c.frame_width},
           {"fps", c.fps},
           {"ball_radius", c.ball_radius},
           {"gravity", c.gravity},
           {"speed_min", c.speed_min},
           {"speed_max", c.speed_max},
           {"vertical_speed_max", c.vertical_speed_max},
           {"seed", c.seed},
           {"with_flow", c.with_flow}};
}

void from_json(const json& j, SyntheticConfig& c) {
  SyntheticConfig d;
  const json known = d;
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw Error("synthetic: unknown config field \"" + key + "\"");
  c.num_videos = j.value("num_videos", d.num_videos);
  c.frames_per_video = j.value("frames_per_video", d.frames_per_video);
  c.frame_height = j.value("frame_height", d.frame_height);
  c.frame_width = j.value("frame_width", d.frame_width);
  c.fps = j.value("fps", d.fps);
  c.ball_radius = j.value("ball_radius", d.ball_radius);
  c.gravity = j.value("gravity", d.gravity);
  c.speed_min = j.value("speed_min", d.speed_min);
  c.speed_max = j.value("speed_max", d.speed_max);
  c.vertical_speed_max = j.value("vertical_speed_max", d.vertical_speed_max);
  c.seed = j.value("seed", d.seed);
  c.with_flow = j.value("with_flow", d.with_flow);
}

Trajectory simulate_trajectory(const SyntheticConfig& config, const BallState& initial, int num_frames) {
  const double r = config.ball_radius, g = config.gravity;
  const double xmax = config.frame_width - r, ymax = config.frame_height - r;
  if (initial.x < r || initial.x > xmax || initial.y < r || initial.y > ymax) {
    throw Error("synthetic: initial ball position is outside the frame");
  }
  Trajectory tr;
  tr.states.reserve(static_cast<std::size_t>(num_frames));
  if (num_frames < 1) return tr;
  tr.states.push_back(initial);
  for (int t = 0; t + 1 < num_frames; ++t) {
    const BallState s = tr.states.back();
    BallState n = s;
    n.x = s.x + s.vx;
    bool hit_h = false;
    if (n.x <= r && s.vx < 0) {
      n.vx = -s.vx;
      hit_h = true;
    } else if (n.x >= xmax && s.vx > 0) {
      n.vx = -s.vx;
      hit_h = true;
    }
    n.x = std::clamp(n.x, r, xmax);

    n.y = s.y + s.vy + 0.5 * g;
    n.vy = s.vy + g;
    bool hit_v = false;
    // The free-flight update conserves vy^2/2 - g*y exactly; a contact keeps
    // that quantity at the clamped position so bounces neither gain nor lose
    // height.
    auto rebound_speed = [&](double wall) { return std::sqrt(std::max(0.0, s.vy * s.vy + 2 * g * (wall - s.y))); };
    if (n.y >= ymax && n.vy > 0) {
      n.vy = -rebound_speed(ymax);
      hit_v = true;
    } else if (n.y <= r && n.vy < 0) {
      n.vy = rebound_speed(r);
      hit_v = true;
    }
    n.y = std::clamp(n.y, r, ymax);

    if (hit_h) tr.events.push_back({t + 1, kBounceH});
    if (hit_v) tr.events.push_back({t + 1, kBounceV});
    if (!hit_v && s.vy < 0 && n.vy >= 0) tr.events.push_back({std::abs(n.vy) < std::abs(s.vy) ? t + 1 : t, kApex});
    tr.states.push_back(n);
  }
  std::stable_sort(tr.events.begin(), tr.events.end(), [](const FrameEvent& a, const FrameEvent& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.class_id < b.class_id;
  });
  return tr;
}

BallState sample_initial_state(const SyntheticConfig& config, int index, int attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(attempt)};
  std::mt19937_64 rng(seq);
  const double r = config.ball_radius, g = config.gravity;
  const double xmax = config.frame_width - r, ymax = config.frame_height - r;
  // Integer starts, half-pixel horizontal speeds and vertical speeds that are
  // multiples of g keep positions on a half-pixel lattice, so distinct
  // trajectories revisit identical positions.
  auto lattice = [&](double lo, double hi) {
    const int a = static_cast<int>(std::ceil(lo)), b = static_cast<int>(std::floor(hi));
    if (a > b) return std::uniform_real_distribution<double>(lo, hi)(rng);
    return static_cast<double>(std::uniform_int_distribution<int>(a, b)(rng));
  };
  for (;;) {
    BallState s;
    s.x = lattice(r, xmax);
    s.y = lattice(r, ymax);
    const int k0 = static_cast<int>(std::ceil(2 * config.speed_min)), k1 = static_cast<int>(std::floor(2 * config.speed_max));
    const double speed = k0 <= k1 ? 0.5 * std::uniform_int_distribution<int>(k0, k1)(rng)
                                  : std::uniform_real_distribution<double>(config.speed_min, config.speed_max)(rng);
    s.vx = std::bernoulli_distribution(0.5)(rng) ? speed : -speed;
    if (g > 0) {
      const int m = static_cast<int>(std::floor(config.vertical_speed_max / g));
      s.vy = g * std::uniform_int_distribution<int>(-m, m)(rng);
      // Highest point of the parabola through this state: it must clear the
      // ceiling and leave at least a third of the free height to fall.
      const double top = s.y - s.vy * s.vy / (2 * g);
      if (top < r + 1 || top > ymax - (ymax - r) / 3) continue;
    } else {
      s.vy = std::uniform_real_distribution<double>(-config.vertical_speed_max, config.vertical_speed_max)(rng);
    }
    return s;
  }
}

std::vector<std::string> synthetic_class_names() { return {"bounce-h", "bounce-v", "apex"}; }

namespace {

std::string video_name(int index, int count) {
  std::size_t width = 3;
  for (int c = count - 1; c >= 1000; c /= 10) ++width;
  std::string digits = std::to_string(index);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return "v" + digits;
}

bool frames_unique(const Trajectory& tr) {
  for (std::size_t i = 1; i < tr.events.size(); ++i)
    if (tr.events[i].frame == tr.events[i - 1].frame) return false;
  return true;
}

Split split_of(int index) {
  const int m = index % 5;
  return m < 3 ? Split::kTrain : (m == 3 ? Split::kVal : Split::kTest);
}

// Fraction of the pixel [px, px+1) x [py, py+1) inside the ball, 4x4 samples.
double coverage(const BallState& s, double r, int px, int py) {
  int inside = 0;
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i) {
      const double dx = px + (i + 0.5) / 4 - s.x, dy = py + (j + 0.5) / 4 - s.y;
      if (dx * dx + dy * dy <= r * r) ++inside;
    }
  return inside / 16.0;
}

}  // namespace

std::vector<SyntheticVideo> plan_synthetic(const SyntheticConfig& config) {
  config.validate();
  std::vector<SyntheticVideo> out;
  out.reserve(static_cast<std::size_t>(config.num_videos));
  for (int i = 0; i < config.num_videos; ++i) {
    SyntheticVideo v;
    v.id = video_name(i, config.num_videos);
    v.split = split_of(i);
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      v.trajectory = simulate_trajectory(config, sample_initial_state(config, i, attempt), config.frames_per_video);
      ok = frames_unique(v.trajectory);
    }
    if (!ok) throw Error("synthetic: could not draw a trajectory with one event per frame for " + v.id);
    out.push_back(std::move(v));
  }
  return out;
}

Image render_frame(const SyntheticConfig& config, const BallState& state) {
  const int h = config.frame_height, w = config.frame_width;
  Image img;
  img.height = h;
  img.width = w;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(h) * w * 3);
  static constexpr double kBall[3] = {0.98, 0.92, 0.35};
  const double r = config.ball_radius;
  const int x0 = std::max(0, static_cast<int>(std::floor(state.x - r)) - 1);
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(state.x + r)) + 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(state.y - r)) - 1);
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(state.y + r)) + 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double bg[3] = {0.15 + 0.5 * (x + 0.5) / w, 0.15 + 0.5 * (y + 0.5) / h, 0.35};
      const double cov = (x >= x0 && x <= x1 && y >= y0 && y <= y1) ? coverage(state, r, x, y) : 0.0;
      std::uint8_t* p = img.pixels.data() + (static_cast<std::size_t>(y) * w + x) * 3;
      for (int c = 0; c < 3; ++c) p[c] = static_cast<std::uint8_t>(std::lround(255.0 * (bg[c] * (1 - cov) + kBall[c] * cov)));
    }
  return img;
}

FlowField render_flow(const SyntheticConfig& config, const BallState& state, const BallState& next) {
  FlowField f;
  f.height = config.frame_height;
  f.width = config.frame_width;
  f.values.assign(static_cast<std::size_t>(f.height) * f.width * 2, 0.0f);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      if (coverage(state, config.ball_radius, x, y) < 0.5) continue;
      float* p = f.values.data() + (static_cast<std::size_t>(y) * f.width + x) * 2;
      p[0] = static_cast<float>(next.x - state.x);
      p[1] = static_cast<float>(next.y - state.y);
    }
  return f;
}

VideoData render_video(const SyntheticConfig& config, const Trajectory& trajectory) {
  VideoData v;
  v.num_frames = static_cast<int>(trajectory.states.size());
  v.height = config.frame_height;
  v.width = config.frame_width;
  v.channels = 3;
  v.bytes.resize(v.frame_size() * static_cast<std::size_t>(v.num_frames));
  for (int t = 0; t < v.num_frames; ++t) {
    Image img = render_frame(config, trajectory.states[static_cast<std::size_t>(t)]);
    std::copy(img.pixels.begin(), img.pixels.end(), v.bytes.begin() + static_cast<std::ptrdiff_t>(v.frame_size() * t));
  }
  return v;
}

DatasetManifest synthetic_manifest(const SyntheticConfig& config, const std::vector<SyntheticVideo>& videos,
                                   const std::filesystem::path& root) {
  std::vector<ManifestVideo> vids;
  std::vector<EventLabel> events;
  for (const auto& v : videos) {
    ManifestVideo mv;
    mv.meta.id = v.id;
    mv.meta.fps = config.fps;
    mv.meta.num_frames = static_cast<int>(v.trajectory.states.size());
    mv.meta.frame_source = "frames/" + v.id;
    if (config.with_flow) mv.meta.flow_source = "flow/" + v.id;
    mv.split = v.split;
    vids.push_back(std::move(mv));
    for (const auto& e : v.trajectory.events) events.push_back({v.id, e.frame, e.class_id});
  }
  return DatasetManifest(EventClassTable(synthetic_class_names()), std::move(vids), std::move(events), root);
}

DatasetManifest generate_synthetic(const SyntheticConfig& config, const std::filesystem::path& out_dir) {
  const auto videos = plan_synthetic(config);
  DatasetManifest manifest = synthetic_manifest(config, videos, out_dir);
  std::filesystem::create_directories(out_dir);
  parallel_for(static_cast<int>(videos.size()), worker_count(), [&](int i) {
    const auto& v = videos[static_cast<std::size_t>(i)];
    const auto frame_dir = out_dir / "frames" / v.id;
    std::filesystem::create_directories(frame_dir);
    const auto& states = v.trajectory.states;
    for (std::size_t t = 0; t < states.size(); ++t) {
      write_png(frame_path(frame_dir, static_cast<int>(t), "png"), render_frame(config, states[t]));
    }
    if (config.with_flow) {
      const auto flow_dir = out_dir / "flow" / v.id;
      std::filesystem::create_directories(flow_dir);
      for (std::size_t t = 0; t < states.size(); ++t) {
        const BallState& next = t + 1 < states.size() ? states[t + 1] : states[t];
        write_flow(frame_path(flow_dir, static_cast<int>(t), "flo2"), render_flow(config, states[t], next));
      }
    }
  });
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

std::optional<ApexAmbiguity> find_apex_ambiguity(const SyntheticConfig& config,
                                                 const std::vector<SyntheticVideo>& videos) {
  std::map<std::pair<double, double>, FrameRef> apex_at;
  for (const auto& v : videos)
    for (const auto& e : v.trajectory.events)
      if (e.class_id == kApex) {
        const auto& s = v.trajectory.states[static_cast<std::size_t>(e.frame)];
        apex_at.emplace(std::make_pair(s.x, s.y), FrameRef{v.id, e.frame, true});
      }
  if (apex_at.empty()) return std::nullopt;
  for (const auto& v : videos) {
    std::set<int> apex_frames;
    for (const auto& e : v.trajectory.events)
      if (e.class_id == kApex) apex_frames.insert(e.frame);
    for (std::size_t t = 0; t < v.trajectory.states.size(); ++t) {
      if (apex_frames.count(static_cast<int>(t))) continue;
      const auto& s = v.trajectory.states[t];
      auto it = apex_at.find({s.x, s.y});
      if (it == apex_at.end()) continue;
      return ApexAmbiguity{it->second, FrameRef{v.id, static_cast<int>(t), false}, std::nullopt};
    }
  }
  // No natural collision: restart from the first apex position moving upward,
  // so frame 0 renders identically but is not an apex.
  const FrameRef ref = apex_at.begin()->second;
  const auto& v = *std::find_if(videos.begin(), videos.end(), [&](const SyntheticVideo& x) { return x.id == ref.video_id; });
  BallState start = v.trajectory.states[static_cast<std::size_t>(ref.frame)];
  start.vy = -3.0 * config.gravity;
  const Trajectory cf = simulate_trajectory(config, start, 2);
  for (const auto& e : cf.events)
    if (e.frame == 0 && e.class_id == kApex) return std::nullopt;
  return ApexAmbiguity{ref, FrameRef{"", 0, false}, start};
}

}  // namespace spotkit::data
