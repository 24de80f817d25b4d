#include "spotkit/nn/recurrent.hpp"

#include "spotkit/core.hpp"

#include <Eigen/QR>

#include <cmath>

namespace spotkit::nn {

namespace {

template <typename T>
using RowVecMap = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using ConstRowVecMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

template <typename T>
T sigmoid(T a) {
  return T(1) / (T(1) + std::exp(-a));
}

}  // namespace

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(int in, int out) : in_(in), out_(out) {
  if (in < 1 || out < 1) throw Error("invalid linear layer shape");
  weight_.init("", {out, in}, true);
  bias_.init("", {out}, false);
}

template <typename T>
void Linear<T>::init(Rng& rng) {
  init_uniform(weight_, 1.0 / std::sqrt(static_cast<double>(in_)), rng);
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
Mat<T> Linear<T>::forward(const Mat<T>& x, bool train) const {
  if (x.cols() != in_) {
    throw Error("linear layer expects " + std::to_string(in_) + " features, got " + std::to_string(x.cols()));
  }
  ConstMatMap<T> w(weight_.value.data(), out_, in_);
  Mat<T> y = x * w.transpose();
  y.rowwise() += ConstRowVecMap<T>(bias_.value.data(), out_);
  if (train) x_ = x;
  return y;
}

template <typename T>
Mat<T> Linear<T>::backward(const Mat<T>& dy) {
  MatMap<T> gw(weight_.grad.data(), out_, in_);
  gw.noalias() += dy.transpose() * x_;
  RowVecMap<T>(bias_.grad.data(), out_) += dy.colwise().sum();
  ConstMatMap<T> w(weight_.value.data(), out_, in_);
  x_.resize(0, 0);
  return dy * w;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  weight_.name = prefix + ".weight";
  bias_.name = prefix + ".bias";
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ------------------------------------------------------------------- Gru

template <typename T>
Gru<T>::Gru(int in, int hidden, bool reverse) : in_(in), hidden_(hidden), reverse_(reverse) {
  if (in < 1 || hidden < 1) throw Error("invalid GRU shape");
  // Recurrent and gate parameters are exempt from weight decay.
  w_ih_.init("", {3 * hidden, in}, false);
  w_hh_.init("", {3 * hidden, hidden}, false);
  b_ih_.init("", {3 * hidden}, false);
  b_hh_.init("", {3 * hidden}, false);
}

template <typename T>
void Gru<T>::init(Rng& rng) {
  init_uniform(w_ih_, 1.0 / std::sqrt(static_cast<double>(in_)), rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatMap<T> whh(w_hh_.value.data(), 3 * hidden_, hidden_);
  for (int g = 0; g < 3; ++g) {
    Eigen::MatrixXd a(hidden_, hidden_);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    // Sign-correct so the distribution is uniform over orthogonal matrices.
    const Eigen::MatrixXd r = qr.matrixQR().template triangularView<Eigen::Upper>();
    for (int j = 0; j < hidden_; ++j)
      if (r(j, j) < 0) q.col(j) *= -1.0;
    whh.block(g * hidden_, 0, hidden_, hidden_) = q.cast<T>();
  }
  std::fill(b_ih_.value.begin(), b_ih_.value.end(), T(0));
  std::fill(b_hh_.value.begin(), b_hh_.value.end(), T(0));
}

template <typename T>
Mat<T> Gru<T>::forward(const Mat<T>& x, int batch, int len, bool train) const {
  if (x.cols() != in_) {
    throw Error("GRU expects " + std::to_string(in_) + " features, got " + std::to_string(x.cols()));
  }
  if (x.rows() != static_cast<Eigen::Index>(batch) * len) throw Error("GRU batch/length mismatch");
  const int hd = hidden_;
  ConstMatMap<T> wih(w_ih_.value.data(), 3 * hd, in_);
  ConstMatMap<T> whh(w_hh_.value.data(), 3 * hd, hd);
  ConstRowVecMap<T> bih(b_ih_.value.data(), 3 * hd);
  ConstRowVecMap<T> bhh(b_hh_.value.data(), 3 * hd);

  Mat<T> xp = x * wih.transpose();
  xp.rowwise() += bih;
  Mat<T> out(x.rows(), hd);
  Mat<T> h = Mat<T>::Zero(batch, hd);
  Mat<T> gh(batch, 3 * hd);
  if (train) {
    r_.resize(x.rows(), hd);
    z_.resize(x.rows(), hd);
    n_.resize(x.rows(), hd);
    ghn_.resize(x.rows(), hd);
    hprev_.resize(x.rows(), hd);
  }
  for (int s = 0; s < len; ++s) {
    const int t = reverse_ ? len - 1 - s : s;
    gh.noalias() = h * whh.transpose();
    gh.rowwise() += bhh;
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * len + t;
      const T* gi = &xp(row, 0);
      const T* ghb = &gh(b, 0);
      T* hb = &h(b, 0);
      T* ob = &out(row, 0);
      for (int j = 0; j < hd; ++j) {
        const T r = sigmoid(gi[j] + ghb[j]);
        const T z = sigmoid(gi[hd + j] + ghb[hd + j]);
        const T n = std::tanh(gi[2 * hd + j] + r * ghb[2 * hd + j]);
        const T hp = hb[j];
        const T hn = (T(1) - z) * n + z * hp;
        if (train) {
          r_(row, j) = r;
          z_(row, j) = z;
          n_(row, j) = n;
          ghn_(row, j) = ghb[2 * hd + j];
          hprev_(row, j) = hp;
        }
        ob[j] = hn;
      }
      for (int j = 0; j < hd; ++j) hb[j] = ob[j];
    }
  }
  if (train) {
    x_ = x;
    batch_ = batch;
    len_ = len;
  }
  return out;
}

template <typename T>
Mat<T> Gru<T>::backward(const Mat<T>& dy) {
  const int hd = hidden_;
  const int batch = batch_, len = len_;
  ConstMatMap<T> wih(w_ih_.value.data(), 3 * hd, in_);
  ConstMatMap<T> whh(w_hh_.value.data(), 3 * hd, hd);
  MatMap<T> gwih(w_ih_.grad.data(), 3 * hd, in_);
  MatMap<T> gwhh(w_hh_.grad.data(), 3 * hd, hd);
  RowVecMap<T> gbih(b_ih_.grad.data(), 3 * hd);
  RowVecMap<T> gbhh(b_hh_.grad.data(), 3 * hd);

  Mat<T> dxp(dy.rows(), 3 * hd);
  Mat<T> dh_next = Mat<T>::Zero(batch, hd);
  Mat<T> dgh(batch, 3 * hd);
  Mat<T> hp_t(batch, hd);
  Mat<T> dhp(batch, hd);
  for (int s = len - 1; s >= 0; --s) {
    const int t = reverse_ ? len - 1 - s : s;
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * len + t;
      T* dgi = &dxp(row, 0);
      T* dghb = &dgh(b, 0);
      for (int j = 0; j < hd; ++j) {
        const T r = r_(row, j), z = z_(row, j), n = n_(row, j), hp = hprev_(row, j);
        const T dh = dy(row, j) + dh_next(b, j);
        const T dn = dh * (T(1) - z);
        const T dz = dh * (hp - n);
        const T dan = dn * (T(1) - n * n);
        const T dr = dan * ghn_(row, j);
        const T dar = dr * r * (T(1) - r);
        const T daz = dz * z * (T(1) - z);
        dgi[j] = dar;
        dgi[hd + j] = daz;
        dgi[2 * hd + j] = dan;
        dghb[j] = dar;
        dghb[hd + j] = daz;
        dghb[2 * hd + j] = dan * r;
        dhp(b, j) = dh * z;
        hp_t(b, j) = hp;
      }
    }
    gwhh.noalias() += dgh.transpose() * hp_t;
    gbhh += dgh.colwise().sum();
    dh_next.noalias() = dhp + dgh * whh;
  }
  gwih.noalias() += dxp.transpose() * x_;
  gbih += dxp.colwise().sum();
  Mat<T> dx = dxp * wih;
  x_.resize(0, 0);
  r_.resize(0, 0);
  z_.resize(0, 0);
  n_.resize(0, 0);
  ghn_.resize(0, 0);
  hprev_.resize(0, 0);
  return dx;
}

template <typename T>
void Gru<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  w_ih_.name = prefix + ".w_ih";
  w_hh_.name = prefix + ".w_hh";
  b_ih_.name = prefix + ".b_ih";
  b_hh_.name = prefix + ".b_hh";
  out.insert(out.end(), {&w_ih_, &w_hh_, &b_ih_, &b_hh_});
}

// ----------------------------------------------------------------- BiGru

template <typename T>
BiGru<T>::BiGru(int in, int hidden) : hidden_(hidden), fwd_(in, hidden, false), bwd_(in, hidden, true) {}

template <typename T>
void BiGru<T>::init(Rng& rng) {
  fwd_.init(rng);
  bwd_.init(rng);
}

template <typename T>
Mat<T> BiGru<T>::forward(const Mat<T>& x, int batch, int len, bool train) const {
  Mat<T> out(x.rows(), 2 * hidden_);
  out.leftCols(hidden_) = fwd_.forward(x, batch, len, train);
  out.rightCols(hidden_) = bwd_.forward(x, batch, len, train);
  return out;
}

template <typename T>
Mat<T> BiGru<T>::backward(const Mat<T>& dy) {
  Mat<T> dx = fwd_.backward(dy.leftCols(hidden_));
  dx += bwd_.backward(dy.rightCols(hidden_));
  return dx;
}

template <typename T>
void BiGru<T>::collect(const std::string& prefix, ParamRefs<T>& out) {
  fwd_.collect(prefix + ".fwd", out);
  bwd_.collect(prefix + ".bwd", out);
}

template class Linear<float>;
template class Linear<double>;
template class Gru<float>;
template class Gru<double>;
template class BiGru<float>;
template class BiGru<double>;

}  // namespace spotkit::nn
