#pragma once

#include "spotkit/data/manifest.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace spotkit::data {

enum class Modality { kRgb, kFlow };

std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

/// All decoded frames of one video. RGB is kept as bytes, flow as floats.
struct VideoData {
  int num_frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
  std::vector<float> values;

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * channels; }
  /// Writes frame `t` as floats: RGB scaled to [0,1], flow verbatim.
  void copy_frame(int t, float* dst) const;
};

/// Loads `<dir>/000000.png` (or .jpg) ... for `num_frames` frames.
VideoData load_rgb_frames(const std::filesystem::path& dir, int num_frames);
/// Loads `<dir>/000000.flo2` ... and applies preprocess_flow per frame.
VideoData load_flow_frames(const std::filesystem::path& dir, int num_frames);

/// Per frame and channel: subtract the median, then clamp to [-limit, limit].
/// `flow` holds `frames` consecutive H*W*2 blocks.
void preprocess_flow(float* flow, int frames, int height, int width, float limit = 20.0f);

/// Data-loading parallelism: SPOTKIT_NUM_WORKERS if set (>= 1), else 1.
int worker_count();

/// Runs fn(0..count-1) on up to `workers` threads. Exceptions propagate.
void parallel_for(int count, int workers, const std::function<void(int)>& fn);

/// Decoded-frame cache keyed by video id. Safe for concurrent readers.
class FrameStore {
 public:
  FrameStore(const DatasetManifest& manifest, Modality modality = Modality::kRgb);

  Modality modality() const { return modality_; }
  /// Decodes on first use. Errors name the missing path.
  const VideoData& get(const std::string& video_id);
  /// Decodes the given videos with worker_count() threads.
  void preload(const std::vector<std::string>& ids);
  /// Registers already-decoded frames (e.g. rendered in memory).
  void insert(const std::string& video_id, VideoData data);

 private:
  VideoData load(const std::string& video_id) const;

  const DatasetManifest* manifest_;
  Modality modality_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const VideoData>> cache_;
};

}  // namespace spotkit::data
