#pragma once

#include "spotkit/data/frames.hpp"
#include "spotkit/data/image_io.hpp"
#include "spotkit/data/manifest.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spotkit::data {

/// Class ids of the synthetic benchmark.
inline constexpr int kBounceH = 1;
inline constexpr int kBounceV = 2;
inline constexpr int kApex = 3;

struct SyntheticConfig {
  int num_videos = 200;
  int frames_per_video = 300;
  int frame_height = 64;
  int frame_width = 64;
  double fps = 25.0;
  double ball_radius = 4.0;
  /// px / frame^2, positive is downward (image y grows downward).
  double gravity = 0.5;
  /// Horizontal speed range, px / frame.
  double speed_min = 1.0;
  double speed_max = 3.0;
  /// Largest initial |vertical speed|, px / frame.
  double vertical_speed_max = 5.0;
  std::uint64_t seed = 0;
  bool with_flow = false;

  /// Rejects impossible geometry.
  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

struct BallState {
  double x = 0, y = 0, vx = 0, vy = 0;
};

struct FrameEvent {
  int frame = 0;
  int class_id = 0;
};

struct Trajectory {
  std::vector<BallState> states;  // state at each frame
  std::vector<FrameEvent> events;  // sorted by frame
};

/// Exact constant-acceleration steps: x += vx; y += vy + g/2; vy += g.
/// A wall contact clamps the center to the wall and reverses the normal
/// velocity (vertically with the speed that conserves vy^2/2 - g*y), labelling
/// the contact frame. An upward-to-downward vertical velocity
/// crossing without contact labels an apex at the frame of minimal |vy|
/// (earlier frame on ties).
Trajectory simulate_trajectory(const SyntheticConfig& config, const BallState& initial, int num_frames);

/// Random initial state for video `index`, drawn from a generator seeded by
/// (config.seed, index, attempt).
BallState sample_initial_state(const SyntheticConfig& config, int index, int attempt);

struct SyntheticVideo {
  std::string id;
  Split split = Split::kTrain;
  Trajectory trajectory;
};

/// Trajectories of every video, resampled until no two events share a frame.
/// Split by index: i % 5 in {0,1,2} train, 3 val, 4 test.
std::vector<SyntheticVideo> plan_synthetic(const SyntheticConfig& config);

std::vector<std::string> synthetic_class_names();

/// Gradient background plus an anti-aliased ball; depends only on position.
Image render_frame(const SyntheticConfig& config, const BallState& state);
/// Displacement to the next frame on pixels the ball covers, zero elsewhere.
FlowField render_flow(const SyntheticConfig& config, const BallState& state, const BallState& next);
VideoData render_video(const SyntheticConfig& config, const Trajectory& trajectory);

/// Manifest describing `videos`, with frame_dir "frames/<id>" (and flow_dir
/// "flow/<id>" when config.with_flow).
DatasetManifest synthetic_manifest(const SyntheticConfig& config, const std::vector<SyntheticVideo>& videos,
                                   const std::filesystem::path& root = {});

/// Writes `<out>/manifest.json`, `<out>/frames/<id>/%06d.png` and optional
/// flow files. Byte-identical for identical configs.
DatasetManifest generate_synthetic(const SyntheticConfig& config, const std::filesystem::path& out_dir);

/// A frame location inside a dataset, or a counterfactual trajectory start.
struct FrameRef {
  std::string video_id;  // empty for the counterfactual trajectory
  int frame = 0;
  bool apex = false;
};

struct ApexAmbiguity {
  FrameRef apex_frame;
  FrameRef other_frame;
  /// Set when the partner comes from a re-simulated trajectory.
  std::optional<BallState> counterfactual_start;
};

/// Finds two frames with byte-identical renderings and different apex
/// labelling: first among the dataset's own frames, otherwise by re-simulating
/// from an apex position with a nonzero vertical velocity.
std::optional<ApexAmbiguity> find_apex_ambiguity(const SyntheticConfig& config,
                                                 const std::vector<SyntheticVideo>& videos);

}  // namespace spotkit::data
