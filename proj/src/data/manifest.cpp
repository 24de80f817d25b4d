#include "spotkit/data/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace spotkit::data {

using nlohmann::json;

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw Error("unknown split \"" + s + "\" (expected train, val or test)");
}

DatasetManifest::DatasetManifest(EventClassTable classes, std::vector<ManifestVideo> videos,
                                 std::vector<EventLabel> events, std::filesystem::path root)
    : classes_(std::move(classes)), videos_(std::move(videos)), events_(std::move(events)), root_(std::move(root)) {
  validate();
}

void DatasetManifest::validate() {
  if (classes_.num_classes() < 1) throw Error("manifest: at least one event class is required");
  index_.clear();
  events_by_video_.clear();
  for (std::size_t i = 0; i < videos_.size(); ++i) {
    const auto& m = videos_[i].meta;
    const std::string where = "manifest: video \"" + m.id + "\"";
    if (m.id.empty()) throw Error("manifest: videos[" + std::to_string(i) + "] has an empty id");
    if (!index_.emplace(m.id, i).second) throw Error("manifest: duplicate video id \"" + m.id + "\"");
    if (!(m.fps > 0)) throw Error(where + ": fps must be > 0");
    if (m.num_frames < 1) throw Error(where + ": num_frames must be >= 1");
    if (m.frame_source.empty()) throw Error(where + ": frame_dir is empty");
  }
  std::set<std::pair<std::string, int>> seen;
  for (std::size_t i = 0; i < events_.size(); ++i) {
    const auto& e = events_[i];
    const std::string where = "manifest: events[" + std::to_string(i) + "] (video \"" + e.video_id + "\", frame " +
                              std::to_string(e.frame) + ", class " + std::to_string(e.class_id) + ")";
    auto it = index_.find(e.video_id);
    if (it == index_.end()) throw Error(where + ": unknown video");
    if (!classes_.valid_id(e.class_id)) throw Error(where + ": unknown class id");
    if (e.frame < 0 || e.frame >= videos_[it->second].meta.num_frames) throw Error(where + ": event out of range");
    if (!seen.emplace(e.video_id, e.frame).second) throw Error(where + ": duplicate event frame");
    events_by_video_[e.video_id].push_back(i);
  }
  for (auto& [id, idx] : events_by_video_) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return events_[a].frame < events_[b].frame; });
  }
}

const ManifestVideo& DatasetManifest::video(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error("unknown video \"" + id + "\"");
  return videos_[it->second];
}

std::vector<const ManifestVideo*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestVideo*> out;
  for (const auto& v : videos_)
    if (v.split == s) out.push_back(&v);
  return out;
}

std::vector<EventLabel> DatasetManifest::events_of(const std::string& id) const {
  std::vector<EventLabel> out;
  auto it = events_by_video_.find(id);
  if (it == events_by_video_.end()) return out;
  for (std::size_t i : it->second) out.push_back(events_[i]);
  return out;
}

DenseLabelSeq DatasetManifest::dense_labels(const std::string& id) const {
  return densify(events_of(id), video(id).meta.num_frames, num_classes());
}

std::filesystem::path DatasetManifest::frame_dir(const ManifestVideo& v) const {
  std::filesystem::path p(v.meta.frame_source);
  return p.is_absolute() ? p : root_ / p;
}

std::filesystem::path DatasetManifest::flow_dir(const ManifestVideo& v) const {
  if (v.meta.flow_source.empty()) return {};
  std::filesystem::path p(v.meta.flow_source);
  return p.is_absolute() ? p : root_ / p;
}

namespace {

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw Error("manifest: " + where + " must be an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw Error("manifest: " + where + " is missing field \"" + key + "\"");
  return *it;
}

template <typename V>
V typed(const json& j, const char* key, const std::string& where) {
  const json& v = field(j, key, where);
  try {
    if constexpr (std::is_same_v<V, int>) {
      if (!v.is_number_integer()) throw Error("");
    } else if constexpr (std::is_same_v<V, double>) {
      if (!v.is_number()) throw Error("");
    } else {
      if (!v.is_string()) throw Error("");
    }
    return v.get<V>();
  } catch (const std::exception&) {
    throw Error("manifest: " + where + " field \"" + key + "\" has the wrong type");
  }
}

}  // namespace

DatasetManifest parse_manifest(const json& doc, const std::filesystem::path& root) {
  if (!doc.is_object()) throw Error("manifest: top level must be an object");
  const json& classes = field(doc, "classes", "top level");
  const json& videos = field(doc, "videos", "top level");
  const json& events = field(doc, "events", "top level");
  if (!classes.is_array() || !videos.is_array() || !events.is_array()) {
    throw Error("manifest: classes, videos and events must be arrays");
  }
  std::vector<std::string> names;
  for (const auto& c : classes) {
    if (!c.is_string()) throw Error("manifest: class names must be strings");
    names.push_back(c.get<std::string>());
  }
  EventClassTable table = [&] {
    try {
      return EventClassTable(names);
    } catch (const Error& e) {
      throw Error(std::string("manifest: ") + e.what());
    }
  }();
  std::vector<ManifestVideo> vids;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const std::string where = "videos[" + std::to_string(i) + "]";
    const json& v = videos[i];
    ManifestVideo mv;
    mv.meta.id = typed<std::string>(v, "id", where);
    mv.meta.fps = typed<double>(v, "fps", where);
    mv.meta.num_frames = typed<int>(v, "num_frames", where);
    mv.meta.frame_source = typed<std::string>(v, "frame_dir", where);
    if (v.contains("flow_dir")) mv.meta.flow_source = typed<std::string>(v, "flow_dir", where);
    try {
      mv.split = parse_split(typed<std::string>(v, "split", where));
    } catch (const Error& e) {
      throw Error("manifest: " + where + " (\"" + mv.meta.id + "\"): " + e.what());
    }
    vids.push_back(std::move(mv));
  }
  std::vector<EventLabel> evs;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const std::string where = "events[" + std::to_string(i) + "]";
    EventLabel e;
    e.video_id = typed<std::string>(events[i], "video", where);
    e.frame = typed<int>(events[i], "frame", where);
    e.class_id = typed<int>(events[i], "class", where);
    evs.push_back(std::move(e));
  }
  return DatasetManifest(std::move(table), std::move(vids), std::move(evs), root);
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw Error("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_manifest(doc, path.parent_path());
}

json manifest_to_json(const DatasetManifest& manifest) {
  json doc;
  doc["classes"] = manifest.classes().names();
  json vids = json::array();
  for (const auto& v : manifest.videos()) {
    json j = {{"id", v.meta.id},
              {"fps", v.meta.fps},
              {"num_frames", v.meta.num_frames},
              {"frame_dir", v.meta.frame_source},
              {"split", to_string(v.split)}};
    if (!v.meta.flow_source.empty()) j["flow_dir"] = v.meta.flow_source;
    vids.push_back(std::move(j));
  }
  doc["videos"] = std::move(vids);
  json evs = json::array();
  for (const auto& e : manifest.events()) evs.push_back({{"video", e.video_id}, {"frame", e.frame}, {"class", e.class_id}});
  doc["events"] = std::move(evs);
  return doc;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << manifest_to_json(manifest).dump(1) << "\n";
}

}  // namespace spotkit::data
