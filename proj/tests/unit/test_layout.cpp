#include <cmath>
#include <numeric>
#include <set>

#include "cx/analytics.hpp"
#include "cx/error.hpp"
#include "cx/layout.hpp"
#include "doctest.h"
#include "support/expect.hpp"
#include "support/fixtures.hpp"
#include "support/graphs.hpp"
#include "support/oracles.hpp"

using namespace cx;
using cx::testing::graph_from_edges;

namespace {

double dist(const Point2& a, const Point2& b) { return std::hypot(double(a[0]) - b[0], double(a[1]) - b[1]); }

double mean_pairwise(const Positions& p) {
  double s = 0.0;
  std::size_t c = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j, ++c) s += dist(p[i], p[j]);
  return s / static_cast<double>(c);
}

struct SmallBuild {
  Hierarchy hierarchy;
  std::vector<LevelEmbedding> layouts;
};

const SmallBuild& small_build() {
  static const SmallBuild b = [] {
    BuildConfig cfg;
    cfg.level_fractions = {0.2, 0.25};
    cfg.threads = 1;
    SmallBuild out;
    out.hierarchy = build_hierarchy(cx::testing::three_gaussians(1000, 32, 12).matrix, cfg);
    LayoutParams lp;
    lp.epochs = 100;
    out.layouts = embed_all_levels(out.hierarchy, lp, 42);
    return out;
  }();
  return b;
}

}  // namespace

TEST_CASE("curve fit for the default min_dist and spread") {
  const auto [ra, rb] = cx::testing::reference_curve_fit(0.1, 1.0);
  // Best attainable residual of this curve family on [0, 3 * spread].
  const double best = cx::testing::curve_rmse(ra, rb, 0.1, 1.0);
  REQUIRE(best < 0.0165);
  CHECK(ra == doctest::Approx(1.577).epsilon(0.01));
  CHECK(rb == doctest::Approx(0.895).epsilon(0.01));

  const auto c = fit_curve_params(0.1, 1.0);
  CHECK(std::abs(c.a - 1.577) <= 1e-2);
  CHECK(std::abs(c.b - 0.895) <= 1e-2);
  CHECK(std::abs(c.a - ra) <= 1e-2);
  CHECK(std::abs(c.b - rb) <= 1e-2);
  CHECK(cx::testing::curve_rmse(c.a, c.b, 0.1, 1.0) <= best + 1e-9);
}

TEST_CASE("curve fit sweep over min_dist") {
  double prev_a = std::numeric_limits<double>::infinity(), prev_b = 0.0;
  for (double md : {0.05, 0.1, 0.2, 0.4, 0.8}) {
    const auto c = fit_curve_params(md, 1.0);
    const auto [ra, rb] = cx::testing::reference_curve_fit(md, 1.0);
    CHECK(c.a == doctest::Approx(ra).epsilon(0.02));
    CHECK(c.b == doctest::Approx(rb).epsilon(0.02));
    CHECK(c.a < prev_a);
    CHECK(c.b > prev_b);
    prev_a = c.a;
    prev_b = c.b;
  }
  CHECK_CX_ERROR(fit_curve_params(0.5, 0.5), InvalidArgument);
  CHECK_CX_ERROR(fit_curve_params(0.0, 1.0), InvalidArgument);
}

TEST_CASE("spectral init of a 4-cycle is a square") {
  const auto g = graph_from_edges(4, {{{0, 1}, 1.0}, {{1, 2}, 1.0}, {{2, 3}, 1.0}, {{3, 0}, 1.0}});
  const auto p = initialize_positions(g, InitMethod::Spectral, 1);
  REQUIRE(p.size() == 4);
  // Eigenvalue-0 eigenspace of the normalized Laplacian's antipodal mode:
  // opposite nodes are mirror images, adjacent nodes orthogonal with equal norm.
  for (int d = 0; d < 2; ++d) {
    CHECK(p[0][d] + p[2][d] == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(p[1][d] + p[3][d] == doctest::Approx(0.0).epsilon(1e-4));
  }
  const double n0 = std::hypot(p[0][0], p[0][1]), n1 = std::hypot(p[1][0], p[1][1]);
  CHECK(n0 == doctest::Approx(n1).epsilon(1e-4));
  CHECK(p[0][0] * p[1][0] + p[0][1] * p[1][1] == doctest::Approx(0.0).epsilon(1e-3));
  CHECK(dist(p[0], p[1]) == doctest::Approx(dist(p[1], p[2])).epsilon(1e-4));
  for (const auto& q : p)
    for (float v : q) CHECK(std::abs(v) <= 10.0f + 1e-4f);
}

TEST_CASE("random init is reproducible and single nodes sit at the origin") {
  const auto g = graph_from_edges(6, {{{0, 1}, 1.0}, {{1, 2}, 0.5}, {{2, 0}, 0.5}, {{3, 4}, 1.0}, {{4, 5}, 1.0}});
  const auto a = initialize_positions(g, InitMethod::Random, 9);
  CHECK(a == initialize_positions(g, InitMethod::Random, 9));
  CHECK_FALSE(a == initialize_positions(g, InitMethod::Random, 10));

  const auto one = graph_from_edges(1, {});
  CHECK(initialize_positions(one, InitMethod::Spectral, 1) == Positions{Point2{0.0f, 0.0f}});
  CHECK(initialize_positions(one, InitMethod::Random, 1) == Positions{Point2{0.0f, 0.0f}});
}

TEST_CASE("components occupy separate cells") {
  const auto g = graph_from_edges(6, {{{0, 1}, 1.0}, {{1, 2}, 1.0}, {{3, 4}, 1.0}, {{4, 5}, 1.0}});
  std::size_t count = 0;
  const auto label = connected_components(g, count);
  CHECK(count == 2);
  CHECK(label == std::vector<std::uint32_t>{0, 0, 0, 1, 1, 1});
  const auto p = initialize_positions(g, InitMethod::Spectral, 3);
  // Bounding boxes of the two components do not overlap.
  float lo[2][2] = {{1e9f, 1e9f}, {1e9f, 1e9f}}, hi[2][2] = {{-1e9f, -1e9f}, {-1e9f, -1e9f}};
  for (std::size_t i = 0; i < 6; ++i)
    for (int d = 0; d < 2; ++d) {
      lo[label[i]][d] = std::min(lo[label[i]][d], p[i][d]);
      hi[label[i]][d] = std::max(hi[label[i]][d], p[i][d]);
    }
  const bool apart_x = hi[0][0] < lo[1][0] || hi[1][0] < lo[0][0];
  const bool apart_y = hi[0][1] < lo[1][1] || hi[1][1] < lo[0][1];
  CHECK((apart_x || apart_y));
}

TEST_CASE("large components use the iterative eigensolver") {
  const auto m = cx::testing::three_gaussians(1800, 16, 4).matrix;
  const auto lg = build_level_graphs(exact_knn(m, 10, Metric::Euclidean));
  const auto p = initialize_positions(lg.symmetric, InitMethod::Spectral, 2);
  REQUIRE(p.size() == 1800);
  for (const auto& q : p)
    for (float v : q) {
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) <= 10.0f + 1e-4f);
    }
}

TEST_CASE("two connected nodes contract to about min_dist") {
  const auto g = graph_from_edges(2, {{{0, 1}, 1.0}});
  OptimizeParams params;
  params.epochs = 500;
  params.neg_samples = 0;
  params.curve = fit_curve_params(0.1, 1.0);
  const auto init = initialize_positions(g, InitMethod::Spectral, 1);
  const auto out = optimize_positions(g, init, params, 7);

  // Scalar reference: both directed copies of the edge fire every epoch,
  // each moving the two ends symmetrically along the line between them.
  const auto& c = params.curve;
  float x0 = init[0][0], x1 = init[1][0];
  for (std::size_t e = 0; e < 500; ++e) {
    const double lr = 1.0 - static_cast<double>(e) / 500.0;
    for (int dir = 0; dir < 2; ++dir) {
      float& h = dir == 0 ? x0 : x1;
      float& t = dir == 0 ? x1 : x0;
      const double dx = static_cast<double>(h) - t;
      const double d2 = dx * dx;
      const double coef = d2 > 0 ? -2.0 * c.a * c.b * std::pow(d2, c.b - 1.0) / (c.a * std::pow(d2, c.b) + 1.0) : 0.0;
      const double grad = std::clamp(coef * dx, -4.0, 4.0);
      h = static_cast<float>(h + grad * lr);
      t = static_cast<float>(t - grad * lr);
    }
  }
  const double reference = std::abs(static_cast<double>(x0) - x1);
  const double final_distance = dist(out.positions[0], out.positions[1]);
  CHECK(reference <= 0.15);
  CHECK(final_distance <= 0.1 * 1.5);
  CHECK(final_distance == doctest::Approx(reference).epsilon(1e-3));
}

TEST_CASE("edgeless graph disperses under repulsion") {
  const auto g = graph_from_edges(20, {});
  OptimizeParams params;
  params.epochs = 50;
  params.neg_samples = 5;
  params.curve = fit_curve_params(0.1, 1.0);
  Positions init(20);
  Rng rng(3);
  for (auto& p : init) p = {static_cast<float>(rng.uniform(-0.5, 0.5)), static_cast<float>(rng.uniform(-0.5, 0.5))};
  const auto out = optimize_positions(g, init, params, 5);
  CHECK(mean_pairwise(out.positions) > mean_pairwise(init));
}

TEST_CASE("anchor learning-rate scale in the update rule") {
  const auto c = fit_curve_params(0.1, 1.0);
  Point2 h{0.0f, 0.0f}, t{1.0f, 0.5f}, h2 = h, t2 = t;
  detail::attract(h, t, c, 0.5, 1.0, 1.0);
  detail::attract(h2, t2, c, 0.5, kAnchorLrScale, 1.0);
  for (int d = 0; d < 2; ++d) {
    CHECK(h2[d] == doctest::Approx(kAnchorLrScale * h[d]).epsilon(1e-5));
    CHECK(t2[d] == t[d]);
  }
  Point2 r{0.2f, 0.1f}, r2 = r;
  const Point2 other{0.0f, 0.0f};
  detail::repel(r, other, c, 1.0, 1.0);
  detail::repel(r2, other, c, 1.0, kAnchorLrScale);
  for (int d = 0; d < 2; ++d)
    CHECK(r2[d] - 0.0f == doctest::Approx(0.2f * (d == 0) + 0.1f * (d == 1) + kAnchorLrScale * (r[d] - (d == 0 ? 0.2f : 0.1f))).epsilon(1e-5));
  CHECK(detail::clip_gradient(9.0) == 4.0);
  CHECK(detail::clip_gradient(-9.0) == -4.0);
}

TEST_CASE("optimization preconditions") {
  const auto g = graph_from_edges(3, {{{0, 1}, 1.0}});
  OptimizeParams params;
  params.curve = fit_curve_params(0.1, 1.0);
  CHECK_CX_ERROR(optimize_positions(g, Positions(2), params, 1), ShapeMismatch);
  params.epochs = 0;
  CHECK_CX_ERROR(optimize_positions(g, Positions(3), params, 1), InvalidArgument);
  params.epochs = 5;
  Positions bad(3);
  bad[1][0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_CX_ERROR(optimize_positions(g, bad, params, 1), NonFinitePosition);
}

TEST_CASE("level layouts: finite, deterministic, objective decreases") {
  const auto& b = small_build();
  REQUIRE(b.layouts.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& emb = b.layouts[l];
    CHECK(emb.level == l);
    CHECK(emb.positions.size() == b.hierarchy.levels[l].size());
    for (const auto& p : emb.positions) CHECK((std::isfinite(p[0]) && std::isfinite(p[1])));
    REQUIRE(emb.objective_trace.size() >= 2);
  }
  const auto& trace = b.layouts[0].objective_trace;
  CHECK(trace.back() <= trace.front());
  LayoutParams lp;
  lp.epochs = 100;
  CHECK(embed_level(b.hierarchy, 2, lp, 42) == b.layouts[2]);
  CHECK_CX_ERROR(embed_level(b.hierarchy, 3, lp, 42), BadLevel);
}

TEST_CASE("concurrent mode produces finite layouts") {
  const auto& b = small_build();
  LayoutParams lp;
  lp.epochs = 50;
  lp.deterministic = false;
  lp.threads = 3;
  const auto emb = embed_level(b.hierarchy, 0, lp, 42);
  for (const auto& p : emb.positions) CHECK((std::isfinite(p[0]) && std::isfinite(p[1])));
}

TEST_CASE("ten-node level with k clipped to nine") {
  BuildConfig cfg;
  cfg.level_counts = {10};
  cfg.threads = 1;
  const auto h = build_hierarchy(cx::testing::three_gaussians(120, 8, 6).matrix, cfg);
  REQUIRE(h.levels[1].size() == 10);
  LayoutParams lp;
  lp.epochs = 30;
  const auto emb = embed_level(h, 1, lp, 1);
  CHECK(emb.positions.size() == 10);
}

TEST_CASE("drill-down membership is the union of fibers") {
  const auto& b = small_build();
  const auto& h = b.hierarchy;
  Rng rng(8);
  for (std::size_t level : {1u, 2u}) {
    const auto fibers = influence_fibers(h.levels[level - 1]);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<std::uint32_t> pick;
      for (auto v : h.levels[level].nodes)
        if (rng.uniform() < 0.1) pick.push_back(v);
      if (pick.empty()) pick.push_back(h.levels[level].nodes[0]);
      std::set<std::uint32_t> expected;
      for (auto v : pick) expected.insert(fibers.at(v).begin(), fibers.at(v).end());
      const auto sub = drill_down_members(h, level, pick);
      CHECK(std::set<std::uint32_t>(sub.member_nodes.begin(), sub.member_nodes.end()) == expected);
      CHECK(sub.member_nodes.size() == expected.size());
    }
  }
  const auto sub = drill_down(h, b.layouts, 2, h.levels[2].nodes, LayoutParams{.epochs = 20}, 3);
  CHECK(sub.member_nodes == h.levels[1].nodes);
  CHECK(sub.positions.size() == h.levels[1].size());

  const auto stored = reveal_stored(h, b.layouts, 1, h.levels[1].nodes);
  CHECK(stored.member_nodes == h.levels[0].nodes);
  CHECK(stored.positions == b.layouts[0].positions);
}

TEST_CASE("drill-down errors") {
  const auto& b = small_build();
  const auto& h = b.hierarchy;
  CHECK_CX_ERROR(drill_down_members(h, 1, std::vector<std::uint32_t>{}), EmptySelection);
  CHECK_CX_ERROR(drill_down_members(h, 0, std::vector<std::uint32_t>{0}), BadLevel);
  CHECK_CX_ERROR(drill_down_members(h, 3, std::vector<std::uint32_t>{0}), BadLevel);
  std::uint32_t not_landmark = 0;
  const std::set<std::uint32_t> l1(h.levels[1].nodes.begin(), h.levels[1].nodes.end());
  while (l1.contains(not_landmark)) ++not_landmark;
  CHECK_CX_ERROR(drill_down_members(h, 1, std::vector<std::uint32_t>{not_landmark}), UnknownLandmark);
}

TEST_CASE("singleton fiber drills down to the landmark position") {
  const auto& b = small_build();
  const auto& h = b.hierarchy;
  const auto fibers = influence_fibers(h.levels[0]);
  const auto pos1 = local_positions(h.levels[1]);
  bool found = false;
  for (const auto& [lm, fiber] : fibers) {
    if (fiber.size() != 1) continue;
    found = true;
    const auto sub = drill_down(h, b.layouts, 1, std::vector<std::uint32_t>{lm}, LayoutParams{.epochs = 20}, 4);
    REQUIRE(sub.positions.size() == 1);
    CHECK(sub.positions[0] == b.layouts[1].positions[pos1.at(lm)]);
    break;
  }
  if (!found) {
    // Build a hierarchy where every node is its own landmark's only member.
    Hierarchy manual = h;
    auto& l0 = manual.levels[0];
    const auto lm = l0.landmarks[0];
    for (std::size_t i = 0; i < l0.size(); ++i)
      if (l0.nodes[i] != lm && l0.influence[i] == lm) l0.influence[i] = l0.landmarks[1];
    const auto sub = drill_down(manual, b.layouts, 1, std::vector<std::uint32_t>{lm}, LayoutParams{.epochs = 20}, 4);
    REQUIRE(sub.positions.size() == 1);
    CHECK(sub.positions[0] == b.layouts[1].positions[pos1.at(lm)]);
  }
}
