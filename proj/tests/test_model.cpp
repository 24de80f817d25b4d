#include "doctest.h"
#include "tiny.hpp"

#include "spotkit/model.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace spotkit;
using nn::Mat;
using nn::Tensor;

namespace {

template <typename T>
Tensor<T> random_tensor(int n, int h, int w, int c, std::uint64_t seed, double lo = -1, double hi = 1) {
  Tensor<T> x(n, h, w, c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : x.v) v = static_cast<T>(u(rng));
  return x;
}

template <typename T>
Mat<T> random_mat(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Mat<T> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = static_cast<T>(n(rng));
  return m;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("spotkit_model_test_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t read_u32(const std::string& s, std::size_t off) {
  std::uint32_t v;
  std::memcpy(&v, s.data() + off, 4);
  return v;
}

}  // namespace

TEST_CASE("shift channel count") {
  CHECK(nn::shift_channel_count(368) == 92);
  CHECK(nn::shift_channel_count(30) == 8);
  CHECK(nn::shift_channel_count(4) == 4);
  CHECK(nn::shift_channel_count(6) == 4);
  for (int c = 1; c <= 400; ++c) {
    const int s = nn::shift_channel_count(c);
    CHECK(s <= c);
    if (s < c) {
      CHECK(s % 4 == 0);
      CHECK(4 * s >= c);
      CHECK(4 * (s - 4) < c);
    }
  }
}

TEST_CASE("temporal shift") {
  // L = 1: both neighbours are out of range
  auto one = random_tensor<double>(1, 2, 2, 6, 1);
  auto y = one;
  nn::temporal_shift_inplace(y, 1, 4);
  for (int p = 0; p < 4; ++p) {
    for (int c = 0; c < 4; ++c) CHECK(y.v[p * 6 + c] == 0.0);
    for (int c = 4; c < 6; ++c) CHECK(y.v[p * 6 + c] == one.v[p * 6 + c]);
  }

  // time-constant input: interior frames unchanged
  Tensor<double> k(6, 1, 1, 4);
  for (int t = 0; t < 6; ++t)
    for (int c = 0; c < 4; ++c) k.v[t * 4 + c] = c + 1.0;
  auto ks = k;
  nn::temporal_shift_inplace(ks, 6, 4);
  for (int t = 1; t <= 4; ++t)
    for (int c = 0; c < 4; ++c) CHECK(ks.v[t * 4 + c] == k.v[t * 4 + c]);

  // impulse in a forward channel moves one step later
  Tensor<double> imp(8, 1, 1, 4);
  imp.v[3 * 4 + 0] = 1.0;
  nn::temporal_shift_inplace(imp, 8, 4);
  for (int t = 0; t < 8; ++t) CHECK(imp.v[t * 4 + 0] == (t == 4 ? 1.0 : 0.0));
  // and in a backward channel one step earlier
  Tensor<double> back(8, 1, 1, 4);
  back.v[3 * 4 + 3] = 1.0;
  nn::temporal_shift_inplace(back, 8, 4);
  for (int t = 0; t < 8; ++t) CHECK(back.v[t * 4 + 3] == (t == 2 ? 1.0 : 0.0));

  // clips do not leak into each other
  Tensor<double> two(4, 1, 1, 2);
  for (auto& v : two.v) v = 1.0;
  nn::temporal_shift_inplace(two, 2, 2);
  CHECK(two.v[0] == 0.0);
  CHECK(two.v[2 * 2 + 0] == 0.0);
  CHECK(two.v[1 * 2 + 1] == 0.0);

  CHECK_THROWS_AS(nn::TemporalShift<double>(ShiftMode::kTsm, 8, 3), Error);
}

TEST_CASE("adjoint of the shift") {
  auto x = random_tensor<double>(12, 2, 3, 8, 2), g = random_tensor<double>(12, 2, 3, 8, 3);
  auto sx = x, ag = g;
  nn::temporal_shift_inplace(sx, 6, 4);
  nn::temporal_shift_adjoint_inplace(ag, 6, 4);
  double a = 0, b = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    a += sx.v[i] * g.v[i];
    b += x.v[i] * ag.v[i];
  }
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("gate shift") {
  const int c = 12, s = 8, L = 4;
  nn::TemporalShift<double> gsm(ShiftMode::kGsm, c, s);
  nn::Rng rng(5);
  gsm.init(rng);
  const auto x = random_tensor<double>(L, 3, 3, c, 7);

  SUBCASE("zero gate is the identity") {
    gsm.zero_gate();
    const auto y = gsm.forward(x, L, false);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.v[i] == x.v[i]);
  }

  SUBCASE("saturated gate is the plain shift") {
    nn::ParamRefs<double> ps;
    gsm.collect("g", ps);
    for (auto* p : ps) std::fill(p->value.begin(), p->value.end(), p->name == "g.gate.bias" ? 50.0 : 0.0);
    const auto y = gsm.forward(x, L, false);
    auto want = x;
    nn::TemporalShift<double> tsm(ShiftMode::kTsm, c, s);
    want = tsm.forward(x, L, false);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.v[i] == doctest::Approx(want.v[i]).epsilon(1e-12));
  }

  SUBCASE("matches a direct evaluation of the formula") {
    nn::ParamRefs<double> ps;
    gsm.collect("g", ps);
    REQUIRE(ps.size() == 2);
    const auto& w = ps[0]->value;  // [2, 3, 3, s]
    const auto& b = ps[1]->value;
    std::normal_distribution<double> nd(0, 0.3);
    for (auto* p : ps)
      for (auto& v : p->value) v = nd(rng);
    const auto y = gsm.forward(x, L, false);
    auto xv = [&](int t, int yy, int xx, int ch) {
      if (t < 0 || t >= L || yy < 0 || yy >= 3 || xx < 0 || xx >= 3) return 0.0;
      return x.v[((t * 3 + yy) * 3 + xx) * c + ch];
    };
    auto gate = [&](int t, int yy, int xx, int o) {
      if (t < 0 || t >= L) return 0.0;
      double a = b[o];
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          for (int ch = 0; ch < s; ++ch) a += w[((o * 3 + ky) * 3 + kx) * s + ch] * xv(t, yy + ky - 1, xx + kx - 1, ch);
      return std::tanh(a);
    };
    for (int t = 0; t < L; ++t)
      for (int yy = 0; yy < 3; ++yy)
        for (int xx = 0; xx < 3; ++xx)
          for (int ch = 0; ch < c; ++ch) {
            double want;
            if (ch >= s) {
              want = xv(t, yy, xx, ch);
            } else {
              const int o = ch < s / 2 ? 0 : 1, src = ch < s / 2 ? t - 1 : t + 1;
              const double r_src = gate(src, yy, xx, o) * xv(src, yy, xx, ch);
              want = r_src + (1.0 - gate(t, yy, xx, o)) * xv(t, yy, xx, ch);
            }
            CHECK(y.v[((t * 3 + yy) * 3 + xx) * c + ch] == doctest::Approx(want).epsilon(1e-12));
          }
  }
}

TEST_CASE("feature shape and per-frame purity") {
  SpotModel<float> m(default_backbone(), tiny_head(HeadKind::kLinear));
  m.init(1);
  const auto clip = random_tensor<float>(6, 32, 32, 3, 3, 0, 1);
  const auto f = m.features(clip, 6, false);
  CHECK(f.rows() == 6);
  CHECK(f.cols() == 368);

  SpotModel<double> none(tiny_backbone(ShiftMode::kNone), tiny_head(HeadKind::kLinear));
  none.init(2);
  const auto x = random_tensor<double>(8, 16, 16, 3, 4, 0, 1);
  const std::vector<int> perm{3, 0, 7, 1, 6, 2, 5, 4};
  Tensor<double> px = x;
  const std::size_t fs = 16 * 16 * 3;
  for (int i = 0; i < 8; ++i)
    std::copy(x.v.begin() + perm[i] * fs, x.v.begin() + (perm[i] + 1) * fs, px.v.begin() + i * fs);
  const auto a = none.logits(x, 8, false), b = none.logits(px, 8, false);
  for (int i = 0; i < 8; ++i) CHECK((a.row(perm[i]) - b.row(i)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("interior temporal translation equivariance") {
  for (auto mode : {ShiftMode::kGsm, ShiftMode::kTsm}) {
    SpotModel<double> m(tiny_backbone(mode), tiny_head());
    m.init(6);
    const int L = 12, r = m.backbone_config().temporal_radius();
    const auto x = random_tensor<double>(L, 16, 16, 3, 8, 0, 1);
    Tensor<double> d(L, 16, 16, 3);
    const std::size_t fs = 16 * 16 * 3;
    std::copy(x.v.begin(), x.v.end() - static_cast<std::ptrdiff_t>(fs), d.v.begin() + static_cast<std::ptrdiff_t>(fs));
    const auto fx = m.features(x, L, false), fd = m.features(d, L, false);
    for (int t = r; t <= L - 2 - r; ++t) CHECK((fx.row(t) - fd.row(t + 1)).cwiseAbs().maxCoeff() < 1e-9);
    // outside the interior the black frame is visible
    CHECK((fx.row(0) - fd.row(1)).cwiseAbs().maxCoeff() > 1e-6);
  }
}

TEST_CASE("heads") {
  const int L = 10, D = 6;
  nn::Rng rng(3);
  const auto f = random_mat<double>(L, D, 11);

  SUBCASE("linear head is per-frame") {
    nn::Head<double> h(tiny_head(HeadKind::kLinear), D);
    h.init(rng);
    auto g = f;
    g(4, 2) += 1.0;
    const auto a = h.forward(f, 1, L, false), b = h.forward(g, 1, L, false);
    CHECK(a.cols() == 4);
    for (int t = 0; t < L; ++t) CHECK(((a.row(t) - b.row(t)).cwiseAbs().maxCoeff() > 0) == (t == 4));
  }

  SUBCASE("bidirectional flow of information") {
    nn::Head<double> h(tiny_head(HeadKind::kBiGru), D);
    h.init(rng);
    auto g = f;
    g(0, 0) += 0.5;
    const auto a = h.forward(f, 1, L, false), b = h.forward(g, 1, L, false);
    CHECK((a.row(L - 1) - b.row(L - 1)).cwiseAbs().maxCoeff() > 1e-9);
    auto g2 = f;
    g2(L - 1, 0) += 0.5;
    const auto c = h.forward(g2, 1, L, false);
    CHECK((a.row(0) - c.row(0)).cwiseAbs().maxCoeff() > 1e-9);
  }

  SUBCASE("every head keeps the sequence length") {
    for (auto kind : {HeadKind::kBiGru, HeadKind::kBiGruDeep3, HeadKind::kGruStar, HeadKind::kLinear}) {
      nn::Head<double> h(tiny_head(kind), D);
      h.init(rng);
      const auto two = random_mat<double>(2 * 37, D, 2);
      const auto out = h.forward(two, 2, 37, false);
      CHECK(out.rows() == 74);
      CHECK(out.cols() == 4);
    }
    auto none = tiny_head(HeadKind::kGruStar);
    none.grustar_scales = {};
    nn::Head<double> h(none, D);
    h.init(rng);
    CHECK(h.forward(f, 1, L, false).cols() == 4);
  }

  SUBCASE("scale paths pool and repeat") {
    CHECK(nn::ScalePath<double>::pooled_length(100, 16) == 7);
    CHECK(nn::ScalePath<double>::pooled_length(16, 4) == 4);
    nn::ScalePath<double> sp(D, 5, 4);
    sp.init(rng);
    const auto x = random_mat<double>(16, D, 4);
    const auto y = sp.forward(x, 1, 16, false);
    REQUIRE(y.rows() == 16);
    for (int t = 0; t < 16; ++t) CHECK((y.row(t) - y.row(t / 4 * 4)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((y.row(0) - y.row(4)).cwiseAbs().maxCoeff() > 0.0);
    // one window when the scale exceeds the length
    nn::ScalePath<double> big(D, 5, 16);
    big.init(rng);
    const auto z = big.forward(random_mat<double>(10, D, 5), 1, 10, false);
    for (int t = 0; t < 10; ++t) CHECK((z.row(t) - z.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }

  auto bad = tiny_head(HeadKind::kGruStar);
  bad.grustar_scales = {16, 4};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.grustar_scales = {1};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("forward produces distributions") {
  SpotModel<float> m(tiny_backbone(), tiny_head());
  m.init(12);
  const auto clip = random_tensor<float>(20, 32, 32, 3, 13, 0, 1);
  const auto s = m.predict(clip);
  CHECK(s.size() == 20);
  CHECK(s.num_classes() == 3);
  for (int i = 0; i < 20; ++i) CHECK(std::abs(s.scores.row(i).sum() - 1.0) < 1e-5);
  // untrained: no class dominates on average
  const Eigen::RowVectorXd mean = s.scores.colwise().mean();
  for (int c = 0; c < 4; ++c) CHECK(std::abs(mean(c) - 0.25) < 0.15);
  CHECK_THROWS_AS(m.predict(random_tensor<float>(4, 32, 32, 2, 1)), Error);
}

TEST_CASE("parameter count matches the frozen value") {
  std::ifstream is(std::string(SPOTKIT_GOLDEN_DIR) + "/param_count.txt");
  REQUIRE(is);
  long long frozen = 0;
  is >> frozen;
  SpotModel<float> m(default_backbone(), tiny_head());
  const auto n = static_cast<long long>(m.parameter_count());
  CHECK(n == frozen);
  CHECK(std::abs(n - frozen) <= frozen / 5);
}

TEST_CASE("checkpoint round trip") {
  SpotModel<float> m(tiny_backbone(), tiny_head(HeadKind::kGruStar));
  m.init(21);
  // give batch-norm running statistics non-default values
  m.logits(random_tensor<float>(8, 16, 16, 3, 4, 0, 1), 8, true);
  const auto path = temp_file("rt.ckpt");
  CheckpointMeta meta;
  meta.cycle = 7;
  meta.best_val_map = 0.5;
  meta.train_config = {{"clip_len", 8}};
  save_checkpoint(m, meta, path);
  auto loaded = load_checkpoint(path);
  CHECK(loaded.meta.cycle == 7);
  CHECK(loaded.meta.best_val_map == 0.5);
  CHECK(loaded.meta.train_config["clip_len"] == 8);
  CHECK(loaded.model->backbone_config() == m.backbone_config());
  CHECK(loaded.model->head_config() == m.head_config());
  auto a = m.params(), b = loaded.model->params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(std::memcmp(a[i]->value.data(), b[i]->value.data(), a[i]->numel() * sizeof(float)) == 0);
  }
  const auto clip = random_tensor<float>(8, 16, 16, 3, 5, 0, 1);
  CHECK(m.predict(clip).scores == loaded.model->predict(clip).scores);

  const std::string bytes = slurp(path);

  SUBCASE("version mismatch names both versions") {
    std::string v = bytes;
    const std::uint32_t bumped = kCheckpointVersion + 1;
    std::memcpy(v.data() + 8, &bumped, 4);
    dump(path, v);
    const std::string want =
        std::to_string(bumped) + " is not supported (expected version " + std::to_string(kCheckpointVersion);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains(want.c_str()), Error);
  }

  SUBCASE("altered config with the same arrays") {
    const std::uint32_t len = read_u32(bytes, 12);
    auto cfg = nlohmann::json::parse(bytes.substr(16, len));
    cfg["backbone"]["stem_channels"] = 12;
    const std::string text = cfg.dump();
    std::string v = bytes.substr(0, 12);
    const auto n = static_cast<std::uint32_t>(text.size());
    v.append(reinterpret_cast<const char*>(&n), 4);
    v += text;
    v += bytes.substr(16 + len);
    dump(path, v);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("config/parameter mismatch"), Error);
  }

  SUBCASE("truncated file") {
    dump(path, bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("corrupt checkpoint"), Error);
  }

  SUBCASE("wrong magic") {
    std::string v = bytes;
    v[0] = 'X';
    dump(path, v);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("corrupt checkpoint"), Error);
  }
  std::filesystem::remove(path);
}

TEST_CASE("double and float models share parameters") {
  SpotModel<float> f(tiny_backbone(), tiny_head());
  f.init(3);
  SpotModel<double> d(tiny_backbone(), tiny_head());
  copy_parameters(d, f);
  const auto clip = random_tensor<float>(8, 16, 16, 3, 2, 0, 1);
  const auto a = f.predict(clip), b = d.predict(clip);
  CHECK((a.scores - b.scores).cwiseAbs().maxCoeff() < 1e-5);
}
