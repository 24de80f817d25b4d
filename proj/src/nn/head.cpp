#include "spotkit/nn/head.hpp"

#include "spotkit/core.hpp"

namespace spotkit::nn {

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::kBiGru: return "bigru";
    case HeadKind::kBiGruDeep3: return "bigru_deep3";
    case HeadKind::kGruStar: return "grustar";
    case HeadKind::kLinear: return "linear";
  }
  return "linear";
}

HeadKind parse_head_kind(const std::string& s) {
  if (s == "bigru") return HeadKind::kBiGru;
  if (s == "bigru_deep3") return HeadKind::kBiGruDeep3;
  if (s == "grustar") return HeadKind::kGruStar;
  if (s == "linear") return HeadKind::kLinear;
  throw Error("unknown head \"" + s + "\" (expected bigru, bigru_deep3, grustar or linear)");
}

void HeadConfig::validate() const {
  if (hidden < 0) throw Error("head hidden size must be > 0 (or 0 for the feature width)");
  if (num_classes < 1) throw Error("head needs at least one foreground class");
  if (kind == HeadKind::kGruStar) {
    int prev = 1;
    for (int s : grustar_scales) {
      if (s < 2) throw Error("GRU* scales must be >= 2");
      if (s <= prev) throw Error("GRU* scales must be strictly increasing");
      prev = s;
    }
  }
}

// ------------------------------------------------------------- ScalePath

template <typename T>
ScalePath<T>::ScalePath(int in, int hidden, int scale) : scale_(scale), proj_(in, in), gru_(in, hidden) {}

template <typename T>
void ScalePath<T>::init(Rng& rng) {
  proj_.init(rng);
  gru_.init(rng);
}

template <typename T>
Mat<T> ScalePath<T>::forward(const Mat<T>& x, int batch, int len, bool train) const {
  Mat<T> act = proj_.forward(x, train).cwiseMax(T(0));
  const int pooled_len = pooled_length(len, scale_);
  const Eigen::Index d = act.cols();
  Mat<T> pooled(static_cast<Eigen::Index>(batch) * pooled_len, d);
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(pooled.size()));
  for (int b = 0; b < batch; ++b)
    for (int p = 0; p < pooled_len; ++p) {
      const Eigen::Index prow = static_cast<Eigen::Index>(b) * pooled_len + p;
      const int t0 = p * scale_, t1 = std::min(len, t0 + scale_);
      for (Eigen::Index c = 0; c < d; ++c) {
        Eigen::Index best = static_cast<Eigen::Index>(b) * len + t0;
        for (int t = t0 + 1; t < t1; ++t) {
          const Eigen::Index row = static_cast<Eigen::Index>(b) * len + t;
          if (act(row, c) > act(best, c)) best = row;
        }
        pooled(prow, c) = act(best, c);
        argmax[static_cast<std::size_t>(prow * d + c)] = best;
      }
    }
  Mat<T> g = gru_.forward(pooled, batch, pooled_len, train);
  Mat<T> up(x.rows(), g.cols());
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < len; ++t)
      up.row(static_cast<Eigen::Index>(b) * len + t) = g.row(static_cast<Eigen::Index>(b) * pooled_len + t / scale_);
  if (train) {
    batch_ = batch;
    len_ = len;
    act_ = std::move(act);
    argmax_ = std::move(argmax);
  }
  return up;
}

template <typename T>
Mat<T> ScalePath<T>::backward(const Mat<T>& dy) {
  const int pooled_len = pooled_length(len_, scale_);
  Mat<T> dg = Mat<T>::Zero(static_cast<Eigen::Index>(batch_) * pooled_len, dy.cols());
  for (int b = 0; b < batch_; ++b)
    for (int t = 0; t < len_; ++t)
      dg.row(static_cast<Eigen::Index>(b) * pooled_len + t / scale_) += dy.row(static_cast<Eigen::Index>(b) * len_ + t);
  Mat<T> dpooled = gru_.backward(dg);
  Mat<T> dact = Mat<T>::Zero(act_.rows(), act_.cols());
  const Eigen::Index d = act_.cols();
  for (Eigen::Index prow = 0; prow < dpooled.rows(); ++prow)
    for (Eigen::Index c = 0; c < d; ++c) dact(argmax_[static_cast<std::size_t>(prow * d + c)], c) += dpooled(prow, c);
  dact = (dact.array() * (act_.array() > T(0)).template cast<T>()).matrix();
  act_.resize(0, 0);
  argmax_.clear();
  return proj_.backward(dact);
}

template <typename T>
void ScalePath<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  proj_.collect(prefix + ".proj", out);
  gru_.collect(prefix + ".gru", out);
}

// ------------------------------------------------------------------ Head

template <typename T>
Head<T>::Head(const HeadConfig& cfg, int feature_dim) : cfg_(cfg), feature_dim_(feature_dim) {
  cfg_.validate();
  const int hidden = cfg_.resolved_hidden(feature_dim);
  const int k1 = cfg_.num_classes + 1;
  switch (cfg_.kind) {
    case HeadKind::kLinear:
      out_ = Linear<T>(feature_dim, k1);
      break;
    case HeadKind::kBiGru:
      grus_.emplace_back(feature_dim, hidden);
      out_ = Linear<T>(2 * hidden, k1);
      break;
    case HeadKind::kBiGruDeep3:
      grus_.emplace_back(feature_dim, hidden);
      grus_.emplace_back(2 * hidden, hidden);
      grus_.emplace_back(2 * hidden, hidden);
      out_ = Linear<T>(2 * hidden, k1);
      break;
    case HeadKind::kGruStar: {
      grus_.emplace_back(feature_dim, hidden);
      int width = 2 * hidden;
      for (int s : cfg_.grustar_scales) {
        scales_.emplace_back(feature_dim, hidden, s);
        width += 2 * hidden;
      }
      out_ = Linear<T>(width, k1);
      break;
    }
  }
}

template <typename T>
void Head<T>::init(Rng& rng) {
  for (auto& g : grus_) g.init(rng);
  for (auto& s : scales_) s.init(rng);
  out_.init(rng);
}

template <typename T>
Mat<T> Head<T>::forward(const Mat<T>& features, int batch, int len, bool train) const {
  if (features.cols() != feature_dim_) {
    throw Error("head expects feature width " + std::to_string(feature_dim_) + ", got " +
                std::to_string(features.cols()));
  }
  if (cfg_.kind == HeadKind::kGruStar) {
    std::vector<Mat<T>> parts;
    parts.push_back(grus_[0].forward(features, batch, len, train));
    for (const auto& s : scales_) parts.push_back(s.forward(features, batch, len, train));
    Eigen::Index width = 0;
    for (const auto& p : parts) width += p.cols();
    Mat<T> cat(features.rows(), width);
    Eigen::Index off = 0;
    std::vector<int> widths;
    for (const auto& p : parts) {
      cat.middleCols(off, p.cols()) = p;
      off += p.cols();
      widths.push_back(static_cast<int>(p.cols()));
    }
    if (train) widths_ = std::move(widths);
    return out_.forward(cat, train);
  }
  if (grus_.empty()) return out_.forward(features, train);
  Mat<T> h = grus_[0].forward(features, batch, len, train);
  for (std::size_t i = 1; i < grus_.size(); ++i) h = grus_[i].forward(h, batch, len, train);
  return out_.forward(h, train);
}

template <typename T>
Mat<T> Head<T>::backward(const Mat<T>& dlogits) {
  Mat<T> d = out_.backward(dlogits);
  if (cfg_.kind == HeadKind::kGruStar) {
    Eigen::Index off = widths_[0];
    Mat<T> dfeat = grus_[0].backward(d.leftCols(widths_[0]));
    for (std::size_t i = 0; i < scales_.size(); ++i) {
      dfeat += scales_[i].backward(d.middleCols(off, widths_[i + 1]));
      off += widths_[i + 1];
    }
    return dfeat;
  }
  for (auto it = grus_.rbegin(); it != grus_.rend(); ++it) d = it->backward(d);
  return d;
}

template <typename T>
void Head<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  for (std::size_t i = 0; i < grus_.size(); ++i) grus_[i].collect(prefix + ".gru" + std::to_string(i), out);
  for (std::size_t i = 0; i < scales_.size(); ++i) {
    scales_[i].collect(prefix + ".scale" + std::to_string(scales_[i].scale()), out);
  }
  out_.collect(prefix + ".out", out);
}

template class ScalePath<float>;
template class ScalePath<double>;
template class Head<float>;
template class Head<double>;

}  // namespace spotkit::nn
