#include "doctest.h"

#include "spotkit/data/clip.hpp"
#include "spotkit/data/frames.hpp"
#include "spotkit/data/image_io.hpp"
#include "spotkit/data/manifest.hpp"
#include "spotkit/data/synthetic.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <tuple>
#include <algorithm>

using namespace spotkit;
using namespace spotkit::data;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("spotkit_data_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

json minimal_manifest() {
  return {{"classes", {"hit", "miss"}},
          {"videos", {{{"id", "a"}, {"fps", 25}, {"num_frames", 10}, {"frame_dir", "fa"}, {"split", "train"}}}},
          {"events", json::array()}};
}

VideoData ramp_video(int n, int h, int w) {
  VideoData v;
  v.num_frames = n;
  v.height = h;
  v.width = w;
  v.channels = 3;
  v.bytes.resize(v.frame_size() * static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < v.bytes.size(); ++i) v.bytes[i] = static_cast<std::uint8_t>((i * 7 + 3) % 251);
  return v;
}

DenseLabelSeq labels_for(int n, std::map<int, int> events) {
  DenseLabelSeq d;
  d.labels.assign(n, 0);
  d.mask.assign(n, 1);
  for (auto [t, c] : events) d.labels[t] = c;
  return d;
}

bool same_frames(const nn::Tensor<float>& a, const nn::Tensor<float>& b) { return a.same_shape(b) && a.v == b.v; }

// Events implied by a state trace, derived from velocity signs alone.
std::vector<FrameEvent> events_from_trace(const SyntheticConfig& cfg, const std::vector<BallState>& s) {
  std::vector<FrameEvent> out;
  for (std::size_t t = 0; t + 1 < s.size(); ++t) {
    const auto& a = s[t];
    const auto& b = s[t + 1];
    const int next = static_cast<int>(t + 1);
    if (a.vx * b.vx < 0) out.push_back({next, kBounceH});
    const bool at_ceiling = std::abs(b.y - cfg.ball_radius) < 1e-9;
    if (a.vy > 0 && b.vy < 0) out.push_back({next, kBounceV});
    if (a.vy < 0 && b.vy >= 0) {
      if (at_ceiling) {
        out.push_back({next, kBounceV});
      } else {
        out.push_back({std::abs(b.vy) < std::abs(a.vy) ? next : next - 1, kApex});
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const FrameEvent& x, const FrameEvent& y) { return std::tie(x.frame, x.class_id) < std::tie(y.frame, y.class_id); });
  return out;
}

}  // namespace

TEST_CASE("manifest parsing") {
  const auto m = parse_manifest(minimal_manifest(), "/r");
  CHECK(m.num_classes() == 2);
  CHECK(m.events().empty());
  CHECK(m.frame_dir(m.videos()[0]) == fs::path("/r/fa"));
  CHECK(m.flow_dir(m.videos()[0]).empty());
  CHECK(m.dense_labels("a").labels == std::vector<int>(10, 0));

  auto j = minimal_manifest();
  j["events"] = {{{"video", "a"}, {"frame", 10}, {"class", 1}}};
  CHECK_THROWS_WITH_AS(parse_manifest(j, ""), doctest::Contains("event out of range"), Error);
  j["events"] = {{{"video", "a"}, {"frame", 3}, {"class", 3}}};
  CHECK_THROWS_WITH_AS(parse_manifest(j, ""), doctest::Contains("unknown class id"), Error);
  j["events"] = {{{"video", "b"}, {"frame", 3}, {"class", 1}}};
  CHECK_THROWS_WITH_AS(parse_manifest(j, ""), doctest::Contains("unknown video"), Error);
  j["events"] = {{{"video", "a"}, {"frame", 3}, {"class", 1}}, {{"video", "a"}, {"frame", 3}, {"class", 2}}};
  CHECK_THROWS_WITH_AS(parse_manifest(j, ""), doctest::Contains("duplicate event frame"), Error);

  auto d = minimal_manifest();
  d["videos"].push_back(d["videos"][0]);
  CHECK_THROWS_WITH_AS(parse_manifest(d, ""), doctest::Contains("duplicate video id"), Error);
  auto bad = minimal_manifest();
  bad["videos"][0]["split"] = "holdout";
  CHECK_THROWS_AS(parse_manifest(bad, ""), Error);
  bad = minimal_manifest();
  bad["videos"][0]["fps"] = 0;
  CHECK_THROWS_AS(parse_manifest(bad, ""), Error);
  bad = minimal_manifest();
  bad["videos"][0].erase("frame_dir");
  CHECK_THROWS_AS(parse_manifest(bad, ""), Error);
  bad = minimal_manifest();
  bad["classes"] = json::array();
  CHECK_THROWS_AS(parse_manifest(bad, ""), Error);
}

TEST_CASE("manifest save and load") {
  TempDir dir("manifest");
  auto j = minimal_manifest();
  j["videos"].push_back({{"id", "b"}, {"fps", 25}, {"num_frames", 8}, {"frame_dir", "/abs/fb"}, {"split", "test"},
                         {"flow_dir", "flow/b"}});
  j["events"] = {{{"video", "a"}, {"frame", 7}, {"class", 2}}, {{"video", "a"}, {"frame", 2}, {"class", 1}}};
  const auto m = parse_manifest(j, dir.path);
  save_manifest(m, dir.path / "m.json");
  const auto back = load_manifest(dir.path / "m.json");
  CHECK(back.events() == m.events());
  CHECK(back.split(Split::kTest).size() == 1);
  CHECK(back.frame_dir(back.video("b")) == fs::path("/abs/fb"));
  CHECK(back.flow_dir(back.video("b")) == dir.path / "flow/b");
  const auto ev = back.events_of("a");
  REQUIRE(ev.size() == 2);
  CHECK(ev[0].frame == 2);
  CHECK(back.dense_labels("a").labels[7] == 2);
  CHECK_THROWS_AS(load_manifest(dir.path / "missing.json"), Error);
}

TEST_CASE("image and flow files") {
  TempDir dir("images");
  Image im{3, 5, 3, {}};
  for (int i = 0; i < 45; ++i) im.pixels.push_back(static_cast<std::uint8_t>(i * 5));
  write_png(dir.path / "a.png", im);
  const auto back = read_image(dir.path / "a.png");
  CHECK(back.height == 3);
  CHECK(back.width == 5);
  CHECK(back.pixels == im.pixels);

  const auto jpg = read_image(fs::path(SPOTKIT_GOLDEN_DIR) / "solid_8x4.jpg");
  CHECK(jpg.width == 8);
  CHECK(jpg.height == 4);
  CHECK(jpg.channels == 3);
  for (int p = 0; p < 32; ++p) {
    CHECK(std::abs(jpg.pixels[3 * p + 0] - 200) <= 3);
    CHECK(std::abs(jpg.pixels[3 * p + 1] - 40) <= 3);
    CHECK(std::abs(jpg.pixels[3 * p + 2] - 90) <= 3);
  }

  FlowField f{2, 3, {1.5f, -2, 0, 0, 3, 4, 5, 6, 7, 8, -9, 10.25f}};
  write_flow(dir.path / "f.flo2", f);
  CHECK(fs::file_size(dir.path / "f.flo2") == 16 + 12 * 4);
  const auto fb = read_flow(dir.path / "f.flo2");
  CHECK(fb.values == f.values);
  std::ofstream(dir.path / "junk.flo2") << "nope";
  CHECK_THROWS_AS(read_flow(dir.path / "junk.flo2"), Error);
  CHECK(frame_path("d", 12, "png") == fs::path("d/000012.png"));
}

TEST_CASE("frame loading") {
  TempDir dir("frames");
  Image im{2, 2, 3, {10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120}};
  fs::create_directories(dir.path / "v");
  write_png(frame_path(dir.path / "v", 0, "png"), im);
  write_png(frame_path(dir.path / "v", 1, "png"), im);
  const auto v = load_rgb_frames(dir.path / "v", 2);
  CHECK(v.num_frames == 2);
  std::vector<float> px(v.frame_size());
  v.copy_frame(1, px.data());
  CHECK(px[0] == doctest::Approx(10.0 / 255.0));
  CHECK_THROWS_WITH_AS(load_rgb_frames(dir.path / "v", 3), doctest::Contains("000002"), Error);
  CHECK_THROWS_WITH_AS(load_rgb_frames(dir.path / "nowhere", 1), doctest::Contains("nowhere"), Error);

  fs::create_directories(dir.path / "f");
  FlowField f{1, 3, {30, 1, 2, 2, 2, 3}};
  write_flow(frame_path(dir.path / "f", 0, "flo2"), f);
  const auto fl = load_flow_frames(dir.path / "f", 1);
  CHECK(fl.channels == 2);
  // channel 0 {30, 2, 2}: median 2; channel 1 {1, 2, 3}: median 2
  CHECK(fl.values == std::vector<float>{20, -1, 0, 0, 0, 1});
}

TEST_CASE("parallel_for") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](int i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3, [](int i) {
                    if (i == 7) throw Error("boom");
                  }),
                  Error);
}

TEST_CASE("clip extraction and sampling") {
  const auto v = ramp_video(60, 4, 6);
  const auto d = labels_for(60, {{5, 1}, {59, 2}});

  const auto padded = extract_clip(v, d, 2, 0, 100, "v");
  CHECK(padded.length() == 100);
  for (int t = 0; t < 100; ++t) CHECK(padded.labels.mask[t] == (t < 60));
  for (int t = 60; t < 100; ++t) {
    CHECK(padded.labels.dist(t, 0) == 1.0);
    for (int i = 0; i < 72; ++i) CHECK(padded.frames.v[t * 72 + i] == 0.0f);
  }
  CHECK(padded.labels.dist(59, 2) == 1.0);

  nn::Rng rng(1);
  const auto big = ramp_video(500, 2, 2);
  const auto bd = labels_for(500, {{120, 1}, {130, 2}, {499, 1}});
  std::set<int> starts;
  for (int i = 0; i < 300; ++i) {
    const auto c = sample_clip(big, bd, 2, 100, rng, "b");
    CHECK(c.start >= 0);
    CHECK(c.start <= 400);
    starts.insert(c.start);
    for (int t = 0; t < 100; ++t) {
      CHECK(c.labels.mask[t] == 1);
      CHECK(c.labels.dist(t, bd.labels[c.start + t]) == 1.0);
    }
  }
  CHECK(starts.size() > 100);
  CHECK(sample_clip(v, d, 2, 100, rng).start == 0);

  nn::Rng r1(42), r2(42);
  const auto c1 = sample_clip(big, bd, 2, 50, r1), c2 = sample_clip(big, bd, 2, 50, r2);
  CHECK(c1.start == c2.start);
  CHECK(same_frames(c1.frames, c2.frames));
}

TEST_CASE("augmentation") {
  const auto v = ramp_video(12, 4, 10);
  const auto clip = extract_clip(v, labels_for(12, {{3, 1}}), 1, 0, 16, "v");

  SUBCASE("identity config up to the crop") {
    AugmentConfig cfg{10, 0.0, 0.0, 0.0};
    nn::Rng rng(3);
    const auto out = augment(clip, cfg, rng);
    CHECK(same_frames(out.frames, clip.frames));
    CHECK(out.labels.dist == clip.labels.dist);
    CHECK(out.labels.mask == clip.labels.mask);
  }

  SUBCASE("width crop shares one offset") {
    AugmentConfig cfg{4, 0.0, 0.0, 0.0};
    nn::Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      const auto out = augment(clip, cfg, rng);
      CHECK(out.frames.w == 4);
      CHECK(out.frames.h == 4);
      int offset = -1;
      for (int x0 = 0; x0 <= 6 && offset < 0; ++x0) {
        bool ok = true;
        for (int t = 0; t < 12 && ok; ++t)
          for (int y = 0; y < 4 && ok; ++y)
            for (int x = 0; x < 4 && ok; ++x)
              for (int c = 0; c < 3; ++c)
                ok = ok && out.frames.at(t, y, x)[c] == clip.frames.at(t, y, x + x0)[c];
        if (ok) offset = x0;
      }
      CHECK(offset >= 0);
      CHECK(out.labels.dist == clip.labels.dist);
    }
  }

  SUBCASE("photometric changes keep shape, labels and padding") {
    AugmentConfig cfg{10, 0.5, 1.0, 0.0};
    nn::Rng rng(5);
    const auto out = augment(clip, cfg, rng);
    CHECK(out.length() == clip.length());
    CHECK(!same_frames(out.frames, clip.frames));
    CHECK(out.labels.dist == clip.labels.dist);
    for (int t = 12; t < 16; ++t)
      for (int i = 0; i < 120; ++i) CHECK(out.frames.v[t * 120 + i] == 0.0f);
    for (float x : out.frames.v) {
      CHECK(x >= 0.0f);
      CHECK(x <= 1.0f);
    }
  }

  AugmentConfig too_wide{11, 0, 0, 0};
  nn::Rng rng(1);
  CHECK_THROWS_AS(augment(clip, too_wide, rng), Error);
  CHECK_THROWS_AS((AugmentConfig{10, 0, 1.5, 0}).validate(), Error);
  CHECK_THROWS_AS((AugmentConfig{10, 0, 0, -1}).validate(), Error);
}

TEST_CASE("mixup") {
  const auto va = ramp_video(8, 2, 2);
  auto vb = ramp_video(8, 2, 2);
  for (auto& b : vb.bytes) b = static_cast<std::uint8_t>(255 - b);
  const auto a = extract_clip(va, labels_for(8, {{2, 1}}), 3, 0, 8);
  const auto b = extract_clip(vb, labels_for(8, {{2, 2}, {5, 3}}), 3, 0, 10);
  const auto a10 = extract_clip(va, labels_for(8, {{2, 1}}), 3, 0, 10);

  const auto one = mixup(a10, b, 1.0), zero = mixup(a10, b, 0.0);
  CHECK(same_frames(one.frames, a10.frames));
  CHECK(one.labels.dist == a10.labels.dist);
  CHECK(same_frames(zero.frames, b.frames));
  CHECK(zero.labels.dist == b.labels.dist);

  const auto half = mixup(a10, b, 0.5);
  CHECK(half.labels.dist(2, 0) == 0.0);
  CHECK(half.labels.dist(2, 1) == 0.5);
  CHECK(half.labels.dist(2, 2) == 0.5);
  CHECK(half.labels.dist(2, 3) == 0.0);
  CHECK(half.frames.v[5] == doctest::Approx(0.5f * a10.frames.v[5] + 0.5f * b.frames.v[5]));

  nn::Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const double lam = sample_beta(0.2, rng);
    CHECK(lam >= 0.0);
    CHECK(lam <= 1.0);
    const auto m = mixup(a10, b, lam);
    for (int t = 0; t < 10; ++t) {
      CHECK(m.labels.mask[t] == (a10.labels.mask[t] && b.labels.mask[t]));
      if (m.labels.mask[t]) CHECK(std::abs(m.labels.dist.row(t).sum() - 1.0) < 1e-6);
    }
  }
  CHECK_THROWS_AS(mixup(a, b, 0.5), Error);
}

TEST_CASE("synthetic kinematics") {
  SyntheticConfig cfg;
  cfg.frame_height = cfg.frame_width = 200;
  cfg.gravity = 0.0;
  // straight line through the middle, never reaching a wall
  const auto line = simulate_trajectory(cfg, {50, 100, 1.0, 0.0}, 60);
  CHECK(line.events.empty());

  // launched upward at vy = -5 with g = 1 from mid-air: vy(t) = -5 + t
  cfg.gravity = 1.0;
  const auto up = simulate_trajectory(cfg, {100, 100, 0.0, -5.0}, 9);
  REQUIRE(up.events.size() == 1);
  CHECK(up.events[0].frame == 5);
  CHECK(up.events[0].class_id == kApex);
  for (int t = 0; t < 9; ++t) {
    CHECK(up.states[t].vy == doctest::Approx(-5.0 + t));
    CHECK(up.states[t].y == doctest::Approx(100 - 5.0 * t + 0.5 * t * t));
  }

  // ties between equally slow frames go to the earlier one
  const auto tie = simulate_trajectory(cfg, {100, 100, 0.0, -2.5}, 5);
  REQUIRE(tie.events.size() == 1);
  CHECK(tie.events[0].frame == 2);

  CHECK_THROWS_AS(simulate_trajectory(cfg, {1, 100, 0, 0}, 3), Error);
}

TEST_CASE("synthetic benchmark invariants") {
  SyntheticConfig cfg;
  cfg.num_videos = 40;
  cfg.frames_per_video = 300;
  cfg.seed = 13;
  const auto videos = plan_synthetic(cfg);
  REQUIRE(videos.size() == 40);
  std::map<int, int> per_class;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto& tr = videos[i].trajectory;
    CHECK(static_cast<int>(tr.states.size()) == 300);
    for (const auto& s : tr.states) {
      CHECK(s.x >= cfg.ball_radius - 1e-9);
      CHECK(s.x <= cfg.frame_width - cfg.ball_radius + 1e-9);
      CHECK(s.y >= cfg.ball_radius - 1e-9);
      CHECK(s.y <= cfg.frame_height - cfg.ball_radius + 1e-9);
    }
    const auto want = events_from_trace(cfg, tr.states);
    REQUIRE(want.size() == tr.events.size());
    for (std::size_t k = 0; k < want.size(); ++k) {
      CHECK(want[k].frame == tr.events[k].frame);
      CHECK(want[k].class_id == tr.events[k].class_id);
    }
    std::set<int> frames;
    for (const auto& e : tr.events) {
      CHECK(frames.insert(e.frame).second);
      ++per_class[e.class_id];
    }
    const Split want_split = i % 5 < 3 ? Split::kTrain : (i % 5 == 3 ? Split::kVal : Split::kTest);
    CHECK(videos[i].split == want_split);
  }
  for (int c = 1; c <= 3; ++c) CHECK(per_class[c] > 40);

  const auto again = plan_synthetic(cfg);
  for (std::size_t i = 0; i < videos.size(); ++i) {
    CHECK(again[i].trajectory.states.back().x == videos[i].trajectory.states.back().x);
    CHECK(again[i].trajectory.events.size() == videos[i].trajectory.events.size());
  }

  auto other = cfg;
  other.seed = 14;
  const auto s0 = plan_synthetic(other)[0].trajectory.states[0];
  const bool differs = s0.x != videos[0].trajectory.states[0].x || s0.vy != videos[0].trajectory.states[0].vy;
  CHECK(differs);
}

TEST_CASE("apex is not decidable from a single frame") {
  SyntheticConfig cfg;
  cfg.num_videos = 20;
  cfg.seed = 2;
  const auto videos = plan_synthetic(cfg);
  const auto amb = find_apex_ambiguity(cfg, videos);
  REQUIRE(amb);
  CHECK(amb->apex_frame.apex);
  CHECK_FALSE(amb->other_frame.apex);
  auto state_of = [&](const FrameRef& r) {
    if (r.video_id.empty()) {
      REQUIRE(amb->counterfactual_start);
      return simulate_trajectory(cfg, *amb->counterfactual_start, r.frame + 1).states[r.frame];
    }
    for (const auto& v : videos)
      if (v.id == r.video_id) return v.trajectory.states[r.frame];
    FAIL("unknown video");
    return BallState{};
  };
  const auto a = render_frame(cfg, state_of(amb->apex_frame));
  const auto b = render_frame(cfg, state_of(amb->other_frame));
  CHECK(a.pixels == b.pixels);
  // the labels really differ in the dataset
  for (const auto& v : videos) {
    if (v.id != amb->apex_frame.video_id) continue;
    bool found = false;
    for (const auto& e : v.trajectory.events) found = found || (e.frame == amb->apex_frame.frame && e.class_id == kApex);
    CHECK(found);
  }
}

TEST_CASE("synthetic dataset on disk") {
  TempDir a("synth_a"), b("synth_b");
  SyntheticConfig cfg;
  cfg.num_videos = 5;
  cfg.frames_per_video = 30;
  cfg.seed = 7;
  cfg.with_flow = true;
  const auto m = generate_synthetic(cfg, a.path);
  generate_synthetic(cfg, b.path);
  CHECK(m.videos().size() == 5);
  CHECK(m.classes().name(3) == "apex");
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a.path);
    std::ifstream fa(e.path(), std::ios::binary), fb(b.path / rel, std::ios::binary);
    const std::string sa{std::istreambuf_iterator<char>(fa), {}}, sb{std::istreambuf_iterator<char>(fb), {}};
    CHECK(sa == sb);
  }
  CHECK(files == 1 + 5 * 30 * 2);

  const auto loaded = load_manifest(a.path / "manifest.json");
  FrameStore store(loaded);
  const auto& v0 = store.get("v000");
  CHECK(v0.num_frames == 30);
  CHECK(v0.height == 64);
  const auto mem = render_video(cfg, plan_synthetic(cfg)[0].trajectory);
  CHECK(mem.bytes == v0.bytes);
  FrameStore flow(loaded, Modality::kFlow);
  CHECK(flow.get("v000").channels == 2);

  auto bad = cfg;
  bad.ball_radius = 40;
  CHECK_THROWS_WITH_AS(generate_synthetic(bad, a.path), doctest::Contains("impossible geometry"), Error);
  bad = cfg;
  bad.num_videos = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("flow rendering follows the ball") {
  SyntheticConfig cfg;
  const BallState s{30, 30, 2, -1}, n{32, 29.5, 2, -0.5};
  const auto f = render_flow(cfg, s, n);
  CHECK(f.values[2 * (30 * 64 + 30)] == doctest::Approx(2.0f));
  CHECK(f.values[2 * (30 * 64 + 30) + 1] == doctest::Approx(-0.5f));
  CHECK(f.values[0] == 0.0f);
}
