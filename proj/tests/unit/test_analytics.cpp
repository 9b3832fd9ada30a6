#include <algorithm>
#include <cmath>
#include <numeric>

#include "cx/analytics.hpp"
#include "cx/error.hpp"
#include "doctest.h"
#include "support/expect.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace cx;

namespace {

EmbeddingMatrix from_rows(const cx::testing::Dense& rows) {
  EmbeddingMatrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t d = 0; d < rows[i].size(); ++d) m.data[i * m.dims + d] = static_cast<float>(rows[i][d]);
  return m;
}

double brute_outlier(const Positions& p, std::size_t i, std::size_t m) {
  std::vector<double> d;
  for (std::size_t j = 0; j < p.size(); ++j)
    if (j != i) d.push_back(std::hypot(double(p[i][0]) - p[j][0], double(p[i][1]) - p[j][1]));
  std::sort(d.begin(), d.end());
  return d[m - 1];
}

// Two-level hierarchy: 30 nodes; landmark 0 owns nodes 0..19, landmarks 20..29 own themselves.
Hierarchy manual_hierarchy() {
  Hierarchy h;
  h.levels.resize(2);
  auto& l0 = h.levels[0];
  l0.nodes.resize(30);
  std::iota(l0.nodes.begin(), l0.nodes.end(), 0u);
  l0.landmarks = {0};
  for (std::uint32_t v = 20; v < 30; ++v) l0.landmarks.push_back(v);
  for (std::uint32_t v = 0; v < 30; ++v) l0.influence.push_back(v < 20 ? 0 : v);
  h.levels[1].nodes = l0.landmarks;
  return h;
}

}  // namespace

TEST_CASE("planted outlier scores highest") {
  const Positions p{{0, 0}, {0, 1}, {1, 0}, {10, 10}};
  const auto s = outlier_scores(p, 2);
  CHECK(triage_order(s)[0] == 3);
  CHECK(std::max_element(s.begin(), s.end()) - s.begin() == 3);
}

TEST_CASE("coincident points score zero") {
  const Positions p(5, Point2{2.5f, -1.0f});
  for (double v : outlier_scores(p, 3)) CHECK(v == 0.0);
}

TEST_CASE("collinear outlier scores") {
  const Positions p{{0, 0}, {1, 0}, {3, 0}};
  const auto s = outlier_scores(p, 1);
  CHECK(s == std::vector<double>{1, 1, 2});
  for (std::size_t i = 0; i < 3; ++i) CHECK(s[i] == brute_outlier(p, i, 1));
  CHECK_CX_ERROR(outlier_scores(p, 3), MTooLarge);
  CHECK_CX_ERROR(outlier_scores(p, 0), MTooLarge);
}

TEST_CASE("outlier scores match brute force and are translation invariant") {
  Rng rng(4);
  Positions p(200), shifted(200);
  for (std::size_t i = 0; i < 200; ++i) {
    p[i] = {static_cast<float>(rng.normal()), static_cast<float>(rng.normal())};
    shifted[i] = {p[i][0] + 3.0f, p[i][1] - 7.0f};
  }
  const auto s = outlier_scores(p, 10);
  const auto t = outlier_scores(shifted, 10);
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(s[i] == doctest::Approx(brute_outlier(p, i, 10)).epsilon(1e-9));
    CHECK(t[i] == doctest::Approx(s[i]).epsilon(1e-5));
  }
  const auto order = triage_order(s);
  for (std::size_t r = 1; r < order.size(); ++r) CHECK(s[order[r - 1]] >= s[order[r]]);
  CHECK(triage_order({1.0, 2.0, 2.0}) == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("region sizes") {
  const auto h = manual_hierarchy();
  const auto sizes = region_sizes(h, 1);
  CHECK(sizes.at(0) == 20);
  CHECK(sizes.at(25) == 1);
  std::size_t total = 0;
  for (const auto& [lm, s] : sizes) total += s;
  CHECK(total == 30);
  CHECK_CX_ERROR(region_sizes(h, 0), BadLevel);
  CHECK_CX_ERROR(region_sizes(h, 2), BadLevel);

  Hierarchy all = h;
  all.levels[0].landmarks = all.levels[0].nodes;
  all.levels[0].influence = all.levels[0].nodes;
  all.levels[1].nodes = all.levels[0].nodes;
  for (const auto& [lm, s] : region_sizes(all, 1)) CHECK(s == 1);
}

TEST_CASE("duplicate groups: identical and orthogonal rows") {
  const auto same = from_rows({{1, 2, 3}, {1, 2, 3}, {0, 0, 1}});
  const auto groups = duplicate_groups(same, 0.99);
  REQUIRE(groups.size() == 1);
  CHECK(groups[0] == std::vector<std::uint32_t>{0, 1});
  CHECK(duplicate_groups(from_rows({{1, 0}, {0, 1}}), 0.5).empty());
  CHECK(duplicate_groups(same, 1.01).empty());
}

TEST_CASE("duplicate chain is one component") {
  const cx::testing::Dense gram{{1, 0.96, 0.90}, {0.96, 1, 0.96}, {0.90, 0.96, 1}};
  const auto rows = cx::testing::gram_factor(gram);
  const auto m = from_rows(rows);
  // The factor reproduces the target cosines.
  CHECK(1.0 - cx::testing::brute_distance(m, 0, 1, true) == doctest::Approx(0.96).epsilon(1e-6));
  CHECK(1.0 - cx::testing::brute_distance(m, 0, 2, true) == doctest::Approx(0.90).epsilon(1e-6));
  const auto groups = duplicate_groups(m, 0.95);
  REQUIRE(groups.size() == 1);
  CHECK(groups[0] == std::vector<std::uint32_t>{0, 1, 2});
}

TEST_CASE("duplicate groups follow row permutations") {
  Rng rng(12);
  EmbeddingMatrix m(300, 8);
  for (std::size_t i = 0; i < 300; ++i)
    for (std::size_t d = 0; d < 8; ++d)
      m.data[i * 8 + d] = static_cast<float>((i % 50 < 10 ? double(i % 5) : rng.normal()) + 0.01 * rng.normal());
  std::vector<std::uint32_t> perm(300);
  std::iota(perm.begin(), perm.end(), 0u);
  for (std::size_t i = 299; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  EmbeddingMatrix pm(300, 8);
  for (std::size_t i = 0; i < 300; ++i) std::copy_n(m.row(perm[i]).begin(), 8, pm.row(i).begin());

  const auto a = duplicate_groups(m, 0.98);
  auto b = duplicate_groups(pm, 0.98, 3);
  for (auto& g : b) {
    for (auto& v : g) v = perm[v];
    std::sort(g.begin(), g.end());
  }
  std::sort(b.begin(), b.end());
  CHECK_FALSE(a.empty());
  CHECK(a == b);
  std::vector<int> seen(300, 0);
  for (const auto& g : a)
    for (auto v : g) CHECK(++seen[v] == 1);
}

TEST_CASE("trustworthiness of an isometric copy is one") {
  Rng rng(1);
  EmbeddingMatrix m(80, 2);
  for (auto& v : m.data) v = static_cast<float>(rng.uniform(-1, 1));
  Positions p(80);
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (std::size_t i = 0; i < 80; ++i) {
    const double x = m.data[2 * i], y = m.data[2 * i + 1];
    p[i] = {static_cast<float>(3.0 * (c * x - s * y) + 5.0), static_cast<float>(3.0 * (s * x + c * y))};
  }
  CHECK(trustworthiness(m, Metric::Euclidean, p, 10) == doctest::Approx(1.0));
}

TEST_CASE("trustworthiness of shuffled positions") {
  Rng rng(100);
  EmbeddingMatrix m(100, 2);
  for (auto& v : m.data) v = static_cast<float>(rng.uniform(-1, 1));
  Positions p(100);
  for (int i = 0; i < 100; ++i) p[i] = {m.data[2 * i], m.data[2 * i + 1]};
  for (std::size_t i = 99; i > 0; --i) std::swap(p[i], p[rng.below(i + 1)]);

  const double oracle = cx::testing::reference_trustworthiness(m, false, p, 10);
  const double value = trustworthiness(m, Metric::Euclidean, p, 10);
  CHECK(value == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(value == doctest::Approx(0.5231952663).epsilon(1e-9));
  CHECK(value < 0.8);

  // Rank-based: rotation and scaling of the embedding change nothing.
  Positions q = p;
  for (auto& x : q) x = {-2.0f * x[1], 2.0f * x[0]};
  CHECK(trustworthiness(m, Metric::Euclidean, q, 10) == doctest::Approx(value).epsilon(1e-12));

  CHECK_CX_ERROR(trustworthiness(m, Metric::Euclidean, p, 70), MTooLarge);
  CHECK_CX_ERROR(trustworthiness(m, Metric::Euclidean, Positions(5), 3), ShapeMismatch);
}

TEST_CASE("sampled trustworthiness approximates the full value") {
  const auto fx = cx::testing::three_gaussians(600, 16, 2);
  Positions p(600);
  Rng rng(3);
  for (std::size_t i = 0; i < 600; ++i)
    p[i] = {static_cast<float>(fx.matrix.data[i * 16] + 0.3 * rng.normal()),
            static_cast<float>(fx.matrix.data[i * 16 + 1] + 0.3 * rng.normal())};
  const double full = trustworthiness(fx.matrix, Metric::Cosine, p, 15);
  CHECK(full == doctest::Approx(cx::testing::reference_trustworthiness(fx.matrix, true, p, 15)).epsilon(1e-9));
  CHECK(trustworthiness(fx.matrix, Metric::Cosine, p, 15, 300, 7) == doctest::Approx(full).epsilon(0.05));
  CHECK(trustworthiness(fx.matrix, Metric::Cosine, p, 15, 0, 42, 3) == full);
}
