#pragma once

#include "spotkit/nn/tensor.hpp"

namespace spotkit::nn {

// Sequence activations are matrices with one row per (clip, frame), clip-major:
// row = clip * len + t.

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out);

  void init(Rng& rng);
  Mat<T> forward(const Mat<T>& x, bool train) const;
  Mat<T> backward(const Mat<T>& dy);
  void collect(const std::string& prefix, ParamRefs<T>& out);

  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_ = 0, out_ = 0;
  Param<T> weight_, bias_;
  mutable Mat<T> x_;
};

/// Single-direction GRU with r, z, n gate ordering:
///   r = sig(Wir x + bir + Whr h + bhr), z = sig(Wiz x + biz + Whz h + bhz)
///   n = tanh(Win x + bin + r * (Whn h + bhn)), h' = (1 - z) * n + z * h
template <typename T>
class Gru {
 public:
  Gru() = default;
  Gru(int in, int hidden, bool reverse);

  void init(Rng& rng);
  /// x: [batch * len, in] -> [batch * len, hidden]
  Mat<T> forward(const Mat<T>& x, int batch, int len, bool train) const;
  Mat<T> backward(const Mat<T>& dy);
  void collect(const std::string& prefix, ParamRefs<T>& out);

 private:
  int in_ = 0, hidden_ = 0;
  bool reverse_ = false;
  Param<T> w_ih_, w_hh_, b_ih_, b_hh_;
  mutable int batch_ = 0, len_ = 0;
  mutable Mat<T> x_, r_, z_, n_, ghn_, hprev_;
};

/// Forward and reverse GRU outputs concatenated per frame: [.., 2 * hidden].
template <typename T>
class BiGru {
 public:
  BiGru() = default;
  BiGru(int in, int hidden);

  void init(Rng& rng);
  Mat<T> forward(const Mat<T>& x, int batch, int len, bool train) const;
  Mat<T> backward(const Mat<T>& dy);
  void collect(const std::string& prefix, ParamRefs<T>& out);

  int out_features() const { return 2 * hidden_; }

 private:
  int hidden_ = 0;
  Gru<T> fwd_, bwd_;
};

}  // namespace spotkit::nn
