#pragma once

#include "spotkit/core.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace spotkit::data {

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split parse_split(const std::string& s);

struct ManifestVideo {
  VideoMeta meta;
  Split split = Split::kTrain;
};

/// Videos, classes and sparse event labels of one dataset. Relative frame and
/// flow directories resolve against `root` (the manifest's own directory).
class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(EventClassTable classes, std::vector<ManifestVideo> videos, std::vector<EventLabel> events,
                  std::filesystem::path root = {});

  const EventClassTable& classes() const { return classes_; }
  int num_classes() const { return classes_.num_classes(); }
  const std::vector<ManifestVideo>& videos() const { return videos_; }
  const std::vector<EventLabel>& events() const { return events_; }
  const std::filesystem::path& root() const { return root_; }

  bool has_video(const std::string& id) const { return index_.count(id) != 0; }
  const ManifestVideo& video(const std::string& id) const;
  /// Videos of one split, in manifest order.
  std::vector<const ManifestVideo*> split(Split s) const;
  /// Events of one video, sorted by frame.
  std::vector<EventLabel> events_of(const std::string& id) const;
  DenseLabelSeq dense_labels(const std::string& id) const;

  std::filesystem::path frame_dir(const ManifestVideo& v) const;
  /// Empty when the video has no flow directory.
  std::filesystem::path flow_dir(const ManifestVideo& v) const;

 private:
  void validate();

  EventClassTable classes_;
  std::vector<ManifestVideo> videos_;
  std::vector<EventLabel> events_;
  std::filesystem::path root_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, std::vector<std::size_t>> events_by_video_;
};

/// Validates eagerly; errors name the offending record.
DatasetManifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& root);
DatasetManifest load_manifest(const std::filesystem::path& path);

nlohmann::json manifest_to_json(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace spotkit::data
