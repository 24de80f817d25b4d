#include "doctest.h"

#include "spotkit/core.hpp"

#include <cmath>
#include <cstdlib>
#include <random>

using namespace spotkit;

namespace {

DenseLabelSeq seq(std::vector<int> labels) {
  DenseLabelSeq d;
  d.mask.assign(labels.size(), 1);
  d.labels = std::move(labels);
  return d;
}

// Straight from the rule: for every background frame, scan all events and
// pick the nearest within radius, earlier frame on ties.
std::vector<int> dilate_oracle(const std::vector<int>& in, int radius) {
  std::vector<int> out = in;
  const int n = static_cast<int>(in.size());
  for (int t = 0; t < n; ++t) {
    if (in[t] != 0) continue;
    int best = -1;
    for (int e = 0; e < n; ++e) {
      if (in[e] == 0 || std::abs(e - t) > radius) continue;
      if (best < 0 || std::abs(e - t) < std::abs(best - t)) best = e;
    }
    if (best >= 0) out[t] = in[best];
  }
  return out;
}

}  // namespace

TEST_CASE("class table") {
  EventClassTable t({"a", "b"});
  CHECK(t.num_classes() == 2);
  CHECK(t.name(2) == "b");
  CHECK_FALSE(t.valid_id(0));
  CHECK_THROWS_AS(EventClassTable(std::vector<std::string>{}), Error);
  CHECK_THROWS_AS(EventClassTable({"a", "a"}), Error);
  CHECK_THROWS_AS(EventClassTable({""}), Error);
}

TEST_CASE("densify") {
  CHECK(densify({}, 5, 2).labels == std::vector<int>{0, 0, 0, 0, 0});
  const auto d = densify({{"v", 3, 2}}, 5, 2);
  CHECK(d.labels == std::vector<int>{0, 0, 0, 2, 0});
  CHECK(d.mask == std::vector<std::uint8_t>(5, 1));
  CHECK_THROWS_WITH_AS(densify({{"v", 3, 1}, {"v", 3, 2}}, 5, 2), "duplicate event frame 3", Error);
  CHECK_THROWS_AS(densify({{"v", 5, 1}}, 5, 2), Error);
  CHECK_THROWS_AS(densify({{"v", -1, 1}}, 5, 2), Error);
  CHECK_THROWS_AS(densify({{"v", 1, 3}}, 5, 2), Error);
}

TEST_CASE("densify then collect round-trips") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 40);
    std::vector<EventLabel> events;
    for (int t = 0; t < n; ++t)
      if (rng() % 4 == 0) events.push_back({"v", t, 1 + static_cast<int>(rng() % 3)});
    CHECK(collect_events(densify(events, n, 3), "v") == events);
  }
}

TEST_CASE("dilate examples") {
  CHECK(dilate(seq({0, 0, 0, 1, 0, 0, 0}), 1).labels == std::vector<int>{0, 0, 1, 1, 1, 0, 0});
  CHECK(dilate(seq({2, 0, 0}), 1).labels == std::vector<int>{2, 2, 0});
  CHECK(dilate(seq({0, 0, 1, 0, 2, 0}), 1).labels == std::vector<int>{0, 1, 1, 1, 2, 2});
  CHECK_THROWS_AS(dilate(seq({0, 1}), -1), Error);
}

TEST_CASE("dilate matches the tie rule on all 6-frame two-event layouts") {
  int layouts = 0;
  for (int a = 0; a < 6; ++a)
    for (int b = a + 1; b < 6; ++b)
      for (int ca = 1; ca <= 2; ++ca)
        for (int cb = 1; cb <= 2; ++cb)
          for (int r = 0; r <= 5; ++r) {
            std::vector<int> in(6, 0);
            in[a] = ca;
            in[b] = cb;
            CHECK(dilate(seq(in), r).labels == dilate_oracle(in, r));
            ++layouts;
          }
  CHECK(layouts == 15 * 4 * 6);
}

TEST_CASE("dilate properties") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 30);
    std::vector<int> in(n, 0);
    for (auto& x : in)
      if (rng() % 5 == 0) x = 1 + static_cast<int>(rng() % 3);
    const auto d = seq(in);
    CHECK(dilate(d, 0).labels == in);
    std::vector<int> prev = in;
    for (int r = 1; r <= 4; ++r) {
      const auto cur = dilate(d, r).labels;
      CHECK(cur == dilate_oracle(in, r));
      for (int t = 0; t < n; ++t) {
        if (in[t] != 0) CHECK(cur[t] == in[t]);
        if (prev[t] != 0) CHECK(cur[t] != 0);
      }
      prev = cur;
    }
  }
}

TEST_CASE("class weights") {
  CHECK(class_weights(2, 5.0) == std::vector<double>{1, 5, 5});
  CHECK(class_weights(3, 1.0) == std::vector<double>{1, 1, 1, 1});
  CHECK(class_weights(1, 2.5) == std::vector<double>{1, 2.5});
  CHECK_THROWS_AS(class_weights(0, 5.0), Error);
  CHECK_THROWS_AS(class_weights(2, 0.0), Error);
}

TEST_CASE("to_soft is one-hot") {
  auto d = seq({0, 2, 1});
  d.mask[2] = 0;
  const auto s = to_soft(d, 2);
  CHECK(s.dist.rows() == 3);
  CHECK(s.dist.cols() == 3);
  CHECK(s.dist(1, 2) == 1.0);
  CHECK(s.dist.row(0).sum() == 1.0);
  CHECK(s.mask == d.mask);
}

TEST_CASE("rank order: score desc, frame asc, class asc") {
  std::vector<SpotPrediction> p{{"v", 5, 2, 0.5}, {"v", 5, 1, 0.5}, {"v", 2, 1, 0.5}, {"v", 9, 1, 0.9}};
  sort_by_rank(p);
  CHECK(p[0].frame == 9);
  CHECK(p[1].frame == 2);
  CHECK(p[2].class_id == 1);
  CHECK(p[3].class_id == 2);
}
