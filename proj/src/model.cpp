#include "spotkit/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace spotkit {

using nlohmann::json;

BackboneConfig default_backbone() { return BackboneConfig{}; }

}  // namespace spotkit

namespace spotkit::nn {

using nlohmann::json;

void to_json(json& j, const BackboneConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back({{"blocks", s.blocks}, {"channels", s.channels}, {"stride", s.stride}});
  j = json{{"in_channels", c.in_channels},
           {"stem_channels", c.stem_channels},
           {"stages", stages},
           {"shift_mode", nn::to_string(c.shift_mode)},
           {"shift_fraction", {c.shift_num, c.shift_den}},
           {"group_width", c.group_width},
           {"se_ratio", c.se_ratio},
           {"feature_dim", c.feature_dim()}};
}

void from_json(const json& j, BackboneConfig& c) {
  c = BackboneConfig{};
  c.in_channels = j.at("in_channels").get<int>();
  c.stem_channels = j.at("stem_channels").get<int>();
  c.stages.clear();
  for (const auto& s : j.at("stages")) {
    c.stages.push_back({s.at("blocks").get<int>(), s.at("channels").get<int>(), s.at("stride").get<int>()});
  }
  c.shift_mode = nn::parse_shift_mode(j.at("shift_mode").get<std::string>());
  const auto frac = j.at("shift_fraction");
  c.shift_num = frac.at(0).get<int>();
  c.shift_den = frac.at(1).get<int>();
  c.group_width = j.at("group_width").get<int>();
  c.se_ratio = j.at("se_ratio").get<double>();
  if (j.contains("feature_dim") && j.at("feature_dim").get<int>() != c.feature_dim()) {
    throw Error("feature_dim does not match the last stage width");
  }
}

void to_json(json& j, const HeadConfig& c) {
  j = json{{"kind", nn::to_string(c.kind)},
           {"hidden", c.hidden},
           {"num_classes", c.num_classes},
           {"grustar_scales", c.grustar_scales}};
}

void from_json(const json& j, HeadConfig& c) {
  c = HeadConfig{};
  c.kind = nn::parse_head_kind(j.at("kind").get<std::string>());
  c.hidden = j.at("hidden").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.grustar_scales = j.at("grustar_scales").get<std::vector<int>>();
}

}  // namespace spotkit::nn

namespace spotkit {

// -------------------------------------------------------------- SpotModel

template <typename T>
SpotModel<T>::SpotModel(const BackboneConfig& backbone, const HeadConfig& head)
    : backbone_(backbone), head_(head, backbone.feature_dim()) {}

template <typename T>
void SpotModel<T>::init(std::uint64_t seed) {
  nn::Rng rng(seed);
  backbone_.init(rng);
  head_.init(rng);
}

template <typename T>
nn::Mat<T> SpotModel<T>::features(const nn::Tensor<T>& frames, int clip_len, bool train) const {
  nn::Tensor<T> f = backbone_.forward(frames, clip_len, train);
  return nn::Mat<T>(f.rows());
}

template <typename T>
nn::Mat<T> SpotModel<T>::logits(const nn::Tensor<T>& frames, int clip_len, bool train) const {
  const int batch = frames.n / clip_len;
  nn::Mat<T> f = features(frames, clip_len, train);
  if (train) {
    last_batch_ = batch;
    last_len_ = clip_len;
  }
  return head_.forward(f, batch, clip_len, train);
}

template <typename T>
void SpotModel<T>::backward(const nn::Mat<T>& dlogits) {
  nn::Mat<T> df = head_.backward(dlogits);
  nn::Tensor<T> dt(static_cast<int>(df.rows()), 1, 1, static_cast<int>(df.cols()));
  dt.rows() = df;
  backbone_.backward(dt);
}

template <typename T>
nn::Mat<T> softmax_rows(const nn::Mat<T>& logits) {
  nn::Mat<T> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T m = logits.row(r).maxCoeff();
    T sum = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      p(r, c) = std::exp(logits(r, c) - m);
      sum += p(r, c);
    }
    p.row(r) /= sum;
  }
  return p;
}

template <typename T>
nn::Tensor<T> to_scalar(const nn::Tensor<float>& x) {
  if constexpr (std::is_same_v<T, float>) {
    return x;
  } else {
    nn::Tensor<T> y(x.n, x.h, x.w, x.c);
    for (std::size_t i = 0; i < x.numel(); ++i) y.v[i] = static_cast<T>(x.v[i]);
    return y;
  }
}

template <typename T>
ScoreSeq SpotModel<T>::predict(const nn::Tensor<float>& clip) const {
  nn::Mat<T> p = softmax_rows<T>(logits(to_scalar<T>(clip), clip.n, false));
  ScoreSeq out;
  out.scores = p.template cast<double>();
  return out;
}

template <typename T>
nn::ParamRefs<T> SpotModel<T>::params() {
  nn::ParamRefs<T> out;
  backbone_.collect("backbone", out);
  head_.collect("head", out);
  return out;
}

template <typename T>
void SpotModel<T>::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

template <typename T>
std::size_t SpotModel<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params())
    if (p->trainable) n += p->numel();
  return n;
}

template <typename Dst, typename Src>
void copy_parameters(SpotModel<Dst>& dst, SpotModel<Src>& src) {
  auto d = dst.params();
  auto s = src.params();
  if (d.size() != s.size()) throw Error("parameter structure mismatch");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i]->name != s[i]->name || d[i]->numel() != s[i]->numel()) throw Error("parameter structure mismatch");
    for (std::size_t k = 0; k < d[i]->numel(); ++k) d[i]->value[k] = static_cast<Dst>(s[i]->value[k]);
  }
}

// ------------------------------------------------------------ checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'E', '2', 'E', 'S', 'P', 'O', 'T', '\0'};

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw Error("corrupt checkpoint: unexpected end of file");
  return v;
}

std::string get_string(std::istream& is, std::uint32_t max_len) {
  const auto len = get<std::uint32_t>(is);
  if (len > max_len) throw Error("corrupt checkpoint: string length " + std::to_string(len));
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw Error("corrupt checkpoint: unexpected end of file");
  return s;
}

struct RawArray {
  std::uint8_t dtype = 1;
  std::vector<int> shape;
  std::vector<char> bytes;
};

}  // namespace

template <typename T>
void save_checkpoint(SpotModel<T>& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  json cfg{{"backbone", model.backbone_config()},
           {"head", model.head_config()},
           {"meta", {{"cycle", meta.cycle}, {"best_val_map", meta.best_val_map}}},
           {"train_config", meta.train_config}};
  const std::string text = cfg.dump();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto params = model.params();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint8_t>(os, sizeof(T) == 4 ? 1 : 2);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->shape.size()));
    for (int d : p->shape) put<std::int32_t>(os, d);
    os.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->numel() * sizeof(T)));
  }
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("corrupt checkpoint: bad magic in " + path.string());
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw Error("checkpoint format version " + std::to_string(version) + " is not supported (expected version " +
                std::to_string(kCheckpointVersion) + ")");
  }
  json cfg;
  try {
    cfg = json::parse(get_string(is, 1u << 24));
  } catch (const json::exception& e) {
    throw Error(std::string("corrupt checkpoint: bad config block: ") + e.what());
  }
  LoadedModel out;
  BackboneConfig bb;
  HeadConfig hd;
  try {
    bb = cfg.at("backbone").get<BackboneConfig>();
    hd = cfg.at("head").get<HeadConfig>();
    out.meta.cycle = cfg.at("meta").at("cycle").get<int>();
    out.meta.best_val_map = cfg.at("meta").at("best_val_map").get<double>();
    out.meta.train_config = cfg.value("train_config", json::object());
  } catch (const json::exception& e) {
    throw Error(std::string("corrupt checkpoint: bad config block: ") + e.what());
  }
  std::map<std::string, RawArray> arrays;
  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(is, 4096);
    RawArray a;
    a.dtype = get<std::uint8_t>(is);
    if (a.dtype != 1 && a.dtype != 2) throw Error("corrupt checkpoint: unknown dtype for " + name);
    const auto ndim = get<std::uint32_t>(is);
    if (ndim > 8) throw Error("corrupt checkpoint: bad rank for " + name);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = get<std::int32_t>(is);
      if (dim < 0) throw Error("corrupt checkpoint: negative dimension for " + name);
      a.shape.push_back(dim);
      numel *= static_cast<std::size_t>(dim);
    }
    a.bytes.resize(numel * (a.dtype == 1 ? 4 : 8));
    is.read(a.bytes.data(), static_cast<std::streamsize>(a.bytes.size()));
    if (!is) throw Error("corrupt checkpoint: truncated array " + name);
    arrays.emplace(std::move(name), std::move(a));
  }
  std::unique_ptr<SpotModel<float>> model;
  try {
    model = std::make_unique<SpotModel<float>>(bb, hd);
  } catch (const Error& e) {
    throw Error(std::string("config/parameter mismatch: ") + e.what());
  }
  auto params = model->params();
  if (params.size() != arrays.size()) {
    throw Error("config/parameter mismatch: config implies " + std::to_string(params.size()) +
                " arrays, file holds " + std::to_string(arrays.size()));
  }
  for (auto* p : params) {
    auto it = arrays.find(p->name);
    if (it == arrays.end()) throw Error("config/parameter mismatch: missing array " + p->name);
    if (it->second.shape != p->shape) throw Error("config/parameter mismatch: shape of " + p->name);
    const auto& a = it->second;
    if (a.dtype == 1) {
      std::memcpy(p->value.data(), a.bytes.data(), a.bytes.size());
    } else {
      const auto* src = reinterpret_cast<const double*>(a.bytes.data());
      for (std::size_t k = 0; k < p->numel(); ++k) p->value[k] = static_cast<float>(src[k]);
    }
  }
  out.model = std::move(model);
  return out;
}

template class SpotModel<float>;
template class SpotModel<double>;
template nn::Mat<float> softmax_rows<float>(const nn::Mat<float>&);
template nn::Mat<double> softmax_rows<double>(const nn::Mat<double>&);
template nn::Tensor<float> to_scalar<float>(const nn::Tensor<float>&);
template nn::Tensor<double> to_scalar<double>(const nn::Tensor<float>&);
template void save_checkpoint<float>(SpotModel<float>&, const CheckpointMeta&, const std::filesystem::path&);
template void save_checkpoint<double>(SpotModel<double>&, const CheckpointMeta&, const std::filesystem::path&);
template void copy_parameters<float, float>(SpotModel<float>&, SpotModel<float>&);
template void copy_parameters<double, float>(SpotModel<double>&, SpotModel<float>&);
template void copy_parameters<float, double>(SpotModel<float>&, SpotModel<double>&);
template void copy_parameters<double, double>(SpotModel<double>&, SpotModel<double>&);

}  // namespace spotkit
