#include "spotkit/data/frames.hpp"

#include "spotkit/data/image_io.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>

namespace spotkit::data {

std::string to_string(Modality m) { return m == Modality::kFlow ? "flow" : "rgb"; }

Modality parse_modality(const std::string& s) {
  if (s == "rgb") return Modality::kRgb;
  if (s == "flow") return Modality::kFlow;
  throw Error("unknown modality \"" + s + "\" (expected rgb or flow)");
}

void VideoData::copy_frame(int t, float* dst) const {
  const std::size_t n = frame_size();
  const std::size_t off = static_cast<std::size_t>(t) * n;
  if (!values.empty()) {
    std::copy(values.begin() + off, values.begin() + off + n, dst);
    return;
  }
  constexpr float kScale = 1.0f / 255.0f;
  for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(bytes[off + i]) * kScale;
}

VideoData load_rgb_frames(const std::filesystem::path& dir, int num_frames) {
  if (!std::filesystem::is_directory(dir)) throw Error("frame directory not found: " + dir.string());
  VideoData out;
  out.num_frames = num_frames;
  out.channels = 3;
  for (int t = 0; t < num_frames; ++t) {
    auto path = frame_path(dir, t, "png");
    if (!std::filesystem::exists(path)) {
      auto jpg = frame_path(dir, t, "jpg");
      if (!std::filesystem::exists(jpg)) throw Error("missing frame " + path.string());
      path = jpg;
    }
    Image img = read_image(path);
    if (t == 0) {
      out.height = img.height;
      out.width = img.width;
      out.bytes.resize(out.frame_size() * num_frames);
    } else if (img.height != out.height || img.width != out.width) {
      throw Error("frame size changes within video at " + path.string());
    }
    std::copy(img.pixels.begin(), img.pixels.end(), out.bytes.begin() + out.frame_size() * t);
  }
  return out;
}

VideoData load_flow_frames(const std::filesystem::path& dir, int num_frames) {
  if (!std::filesystem::is_directory(dir)) throw Error("flow directory not found: " + dir.string());
  VideoData out;
  out.num_frames = num_frames;
  out.channels = 2;
  for (int t = 0; t < num_frames; ++t) {
    const auto path = frame_path(dir, t, "flo2");
    if (!std::filesystem::exists(path)) throw Error("missing flow frame " + path.string());
    FlowField f = read_flow(path);
    if (t == 0) {
      out.height = f.height;
      out.width = f.width;
      out.values.resize(out.frame_size() * num_frames);
    } else if (f.height != out.height || f.width != out.width) {
      throw Error("flow size changes within video at " + path.string());
    }
    std::copy(f.values.begin(), f.values.end(), out.values.begin() + out.frame_size() * t);
  }
  preprocess_flow(out.values.data(), out.num_frames, out.height, out.width);
  return out;
}

void preprocess_flow(float* flow, int frames, int height, int width, float limit) {
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  std::vector<float> scratch(hw);
  for (int t = 0; t < frames; ++t) {
    float* f = flow + static_cast<std::size_t>(t) * hw * 2;
    for (int c = 0; c < 2; ++c) {
      for (std::size_t i = 0; i < hw; ++i) scratch[i] = f[2 * i + c];
      // Lower median for even counts keeps the result an actual sample value.
      auto mid = scratch.begin() + static_cast<std::ptrdiff_t>((hw - 1) / 2);
      std::nth_element(scratch.begin(), mid, scratch.end());
      const float med = *mid;
      for (std::size_t i = 0; i < hw; ++i) f[2 * i + c] = std::clamp(f[2 * i + c] - med, -limit, limit);
    }
  }
}

int worker_count() {
  const char* env = std::getenv("SPOTKIT_NUM_WORKERS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) return 1;
  return static_cast<int>(std::min<long>(n, 256));
}

void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, count));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

FrameStore::FrameStore(const DatasetManifest& manifest, Modality modality)
    : manifest_(&manifest), modality_(modality) {}

VideoData FrameStore::load(const std::string& video_id) const {
  const auto& v = manifest_->video(video_id);
  if (modality_ == Modality::kFlow) {
    const auto dir = manifest_->flow_dir(v);
    if (dir.empty()) throw Error("video \"" + video_id + "\" has no flow_dir");
    return load_flow_frames(dir, v.meta.num_frames);
  }
  return load_rgb_frames(manifest_->frame_dir(v), v.meta.num_frames);
}

const VideoData& FrameStore::get(const std::string& video_id) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(video_id);
    if (it != cache_.end()) return *it->second;
  }
  auto data = std::make_shared<const VideoData>(load(video_id));
  std::lock_guard<std::mutex> lock(mutex_);
  return *cache_.emplace(video_id, std::move(data)).first->second;
}

void FrameStore::preload(const std::vector<std::string>& ids) {
  parallel_for(static_cast<int>(ids.size()), worker_count(), [&](int i) { get(ids[static_cast<std::size_t>(i)]); });
}

void FrameStore::insert(const std::string& video_id, VideoData data) {
  std::lock_guard<std::mutex> lock(mutex_);
  cache_[video_id] = std::make_shared<const VideoData>(std::move(data));
}

}  // namespace spotkit::data
