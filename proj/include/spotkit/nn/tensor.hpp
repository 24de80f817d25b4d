#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace spotkit::nn {

/// Heap storage aligned like Eigen's own temporaries. Vectorized reductions
/// peel by address, so a fixed alignment keeps results run-to-run identical.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

/// Dense NHWC activation block. Sequences use h = w = 1.
template <typename T>
struct Tensor {
  int n = 0;
  int h = 1;
  int w = 1;
  int c = 0;
  Buffer<T> v;

  Tensor() = default;
  Tensor(int n_, int h_, int w_, int c_) : n(n_), h(h_), w(w_), c(c_), v(numel_of(n_, h_, w_, c_)) {}

  static std::size_t numel_of(int n_, int h_, int w_, int c_) {
    return static_cast<std::size_t>(n_) * h_ * w_ * c_;
  }
  std::size_t numel() const { return v.size(); }
  int pixels() const { return n * h * w; }

  T* at(int i, int y, int x) { return v.data() + ((static_cast<std::size_t>(i) * h + y) * w + x) * c; }
  const T* at(int i, int y, int x) const {
    return v.data() + ((static_cast<std::size_t>(i) * h + y) * w + x) * c;
  }

  /// (n*h*w) x c view.
  MatMap<T> rows() { return MatMap<T>(v.data(), pixels(), c); }
  ConstMatMap<T> rows() const { return ConstMatMap<T>(v.data(), pixels(), c); }

  bool same_shape(const Tensor& o) const { return n == o.n && h == o.h && w == o.w && c == o.c; }
};

/// A learnable array (or a persistent buffer such as running statistics).
template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool decay = true;
  bool trainable = true;

  void init(std::string name_, std::vector<int> shape_, bool decay_, bool trainable_ = true) {
    name = std::move(name_);
    shape = std::move(shape_);
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    value.assign(count, T(0));
    grad.assign(trainable_ ? count : 0, T(0));
    decay = decay_;
    trainable = trainable_;
  }
  std::size_t numel() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using ParamRefs = std::vector<Param<T>*>;

using Rng = std::mt19937_64;

/// Normal(0, sqrt(2 / fan_in)) fill for rectifier networks.
template <typename T>
void init_he(Param<T>& p, int fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& x : p.value) x = static_cast<T>(dist(rng));
}

template <typename T>
void init_uniform(Param<T>& p, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : p.value) x = static_cast<T>(dist(rng));
}

}  // namespace spotkit::nn
