#include <cmath>
#include <set>

#include "cx/error.hpp"
#include "cx/neighbor_graph.hpp"
#include "cx/random.hpp"
#include "doctest.h"
#include "support/expect.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace cx;

namespace {

CsrMatrix csr(std::size_t n, const std::vector<std::vector<std::pair<std::uint32_t, double>>>& rows) {
  CsrMatrix m;
  m.rows = m.cols = n;
  for (const auto& r : rows) {
    for (auto [j, v] : r) {
      m.col_idx.push_back(j);
      m.values.push_back(v);
    }
    m.row_ptr.push_back(m.values.size());
  }
  return m;
}

double recall_against_brute(const EmbeddingMatrix& m, const KnnGraph& g, std::size_t k, bool cosine,
                            std::uint64_t seed) {
  Rng rng(seed);
  std::size_t hits = 0, total = 0;
  for (int s = 0; s < 100; ++s) {
    const std::size_t i = rng.below(m.rows);
    std::vector<std::pair<double, std::uint32_t>> all;
    for (std::size_t j = 0; j < m.rows; ++j)
      if (j != i) all.emplace_back(cx::testing::brute_distance(m, i, j, cosine), static_cast<std::uint32_t>(j));
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
    const double kth = all[k - 1].first;
    for (std::size_t e = 0; e < k; ++e) {
      // Count a returned neighbor as correct when it is no farther than the true k-th.
      const auto j = g.neighbors(i)[e];
      hits += cx::testing::brute_distance(m, i, j, cosine) <= kth + 1e-9 ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("collinear points, euclidean") {
  EmbeddingMatrix m(4, 1, {0, 1, 2, 4});
  const auto g = exact_knn(m, 2, Metric::Euclidean);
  CHECK(g.neighbors(0)[0] == 1);
  CHECK(g.neighbors(0)[1] == 2);
  CHECK(g.distances_of(0)[0] == doctest::Approx(1.0));
  CHECK(g.distances_of(0)[1] == doctest::Approx(2.0));
  CHECK(g.neighbors(3)[0] == 2);
}

TEST_CASE("basis vectors, cosine") {
  EmbeddingMatrix m(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  for (const auto& g : {exact_knn(m, 2, Metric::Cosine), approximate_knn(m, 2, Metric::Cosine)}) {
    for (std::size_t i = 0; i < 3; ++i) {
      const std::set<std::uint32_t> nb(g.neighbors(i).begin(), g.neighbors(i).end());
      CHECK(nb.size() == 2);
      CHECK_FALSE(nb.contains(static_cast<std::uint32_t>(i)));
      for (double d : g.distances_of(i)) CHECK(d == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("knn preconditions") {
  EmbeddingMatrix m(3, 2, {1, 0, 0, 1, 1, 1});
  CHECK_CX_ERROR(build_knn(m, 3, Metric::Cosine), KTooLarge);
  CHECK_CX_ERROR(build_knn(m, 1, Metric::Cosine), KTooSmall);
  EmbeddingMatrix z(4, 2, {1, 0, 0, 0, 1, 1, 2, 1});
  CHECK_CX_ERROR(build_knn(z, 2, Metric::Cosine), MetricUndefined);
  CHECK(parse_metric("euclidean") == Metric::Euclidean);
  CHECK_CX_ERROR(parse_metric("manhattan"), InvalidArgument);
}

TEST_CASE("exact knn matches brute force and respects row invariants") {
  const auto m = cx::testing::gaussian_noise(300, 8, 5);
  for (bool cosine : {true, false}) {
    const auto g = exact_knn(m, 10, cosine ? Metric::Cosine : Metric::Euclidean);
    const auto brute = cx::testing::brute_knn(m, 10, cosine);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < m.rows; ++i) {
      const auto d = g.distances_of(i);
      for (std::size_t e = 0; e < 10; ++e) {
        CHECK(g.neighbors(i)[e] != i);
        CHECK(d[e] >= 0.0);
        if (e) CHECK(d[e] >= d[e - 1]);
        agree += g.neighbors(i)[e] == brute[i][e] ? 1 : 0;
      }
    }
    CHECK(agree == m.rows * 10);
  }
}

TEST_CASE("three-cluster fixture neighbor edges stay within clusters") {
  const auto fx = cx::testing::three_gaussians();
  const auto brute = cx::testing::brute_knn(fx.matrix, 15, true);
  std::size_t oracle_within = 0;
  for (std::size_t i = 0; i < brute.size(); ++i)
    for (auto j : brute[i]) oracle_within += fx.labels[i] == fx.labels[j] ? 1 : 0;
  const double oracle_fraction = static_cast<double>(oracle_within) / (15.0 * 3000.0);
  REQUIRE(oracle_fraction >= 0.99);

  const auto g = build_knn(fx.matrix, 15, Metric::Cosine);
  std::size_t within = 0;
  for (std::size_t i = 0; i < g.n; ++i)
    for (auto j : g.neighbors(i)) within += fx.labels[i] == fx.labels[j] ? 1 : 0;
  CHECK(static_cast<double>(within) / (15.0 * 3000.0) >= 0.99);
}

TEST_CASE("approximate knn recall") {
  const auto fx = cx::testing::three_gaussians();
  KnnOptions opts;
  opts.exact_threshold = 0;
  const auto g = build_knn(fx.matrix, 15, Metric::Cosine, opts);
  CHECK(recall_against_brute(fx.matrix, g, 15, true, 3) >= 0.95);

  const auto noise = cx::testing::gaussian_noise(2000, 24, 9);
  const auto gn = approximate_knn(noise, 15, Metric::Euclidean, opts);
  CHECK(recall_against_brute(noise, gn, 15, false, 4) >= 0.95);
}

TEST_CASE("knn is independent of thread count") {
  const auto m = cx::testing::gaussian_noise(500, 16, 2);
  KnnOptions one, four;
  four.threads = 4;
  CHECK(approximate_knn(m, 10, Metric::Cosine, one) == approximate_knn(m, 10, Metric::Cosine, four));
  CHECK(exact_knn(m, 10, Metric::Cosine, 1) == exact_knn(m, 10, Metric::Cosine, 3));
}

TEST_CASE("calibration of distances 1,2,3,4") {
  const std::vector<double> d{1, 2, 3, 4};
  const double oracle = cx::testing::bisect_sigma(d);
  double residual = 1.0 + std::exp(-1.0 / oracle) + std::exp(-2.0 / oracle) + std::exp(-3.0 / oracle) - 2.0;
  REQUIRE(std::abs(residual) <= 1e-5);
  const auto r = calibrate_smooth_knn(d);
  CHECK(r.rho == 1.0);
  CHECK_FALSE(r.degenerate);
  CHECK(r.sigma == doctest::Approx(oracle).epsilon(1e-4));
  const double sum = 1.0 + std::exp(-1.0 / r.sigma) + std::exp(-2.0 / r.sigma) + std::exp(-3.0 / r.sigma);
  CHECK(std::abs(sum - 2.0) <= 1e-5);
}

TEST_CASE("calibration of equal distances is degenerate") {
  const auto r = calibrate_smooth_knn(std::vector<double>{2, 2, 2, 2});
  CHECK(r.rho == 2.0);
  CHECK(r.sigma == 1e-3);
  CHECK(r.degenerate);
}

TEST_CASE("calibration of 0,10 clamps to the minimum sigma") {
  const auto r = calibrate_smooth_knn(std::vector<double>{0, 10});
  CHECK(r.rho == 0.0);
  CHECK(r.sigma == 1e-3);
  CHECK(fuzzy_weight(10.0, r.rho, r.sigma) <= 1e-300);
}

TEST_CASE("calibration residual over random rows") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> d(15);
    for (auto& v : d) v = rng.uniform(0.0, 3.0);
    std::sort(d.begin(), d.end());
    const auto r = calibrate_smooth_knn(d);
    CHECK(r.sigma >= 1e-3);
    CHECK(r.sigma <= 1e6);
    double sum = 0.0;
    for (double x : d) sum += fuzzy_weight(x, r.rho, r.sigma);
    if (!r.degenerate) CHECK(std::abs(sum - std::log2(15.0)) <= 1e-5);
  }
  CHECK_CX_ERROR(calibrate_smooth_knn(std::vector<double>{1.0}), KTooSmall);
}

TEST_CASE("fuzzy weights") {
  CHECK(fuzzy_weight(0.3, 0.3, 0.7) == 1.0);
  CHECK(fuzzy_weight(1.2, 0.2, 1.0) == doctest::Approx(std::exp(-1.0)));
  CHECK(fuzzy_weight(0.1, 0.3, 0.7) == 1.0);
  CHECK(fuzzy_weight(1e9, 0.0, 1e-3) > 0.0);
}

TEST_CASE("fuzzy union with a certain edge") {
  // 0 -> 1 with p = 1, 1 -> 0 with p = 0.5.
  FuzzyGraph f{csr(2, {{{1, 1.0}}, {{0, 0.5}}})};
  const auto s = symmetrize(f);
  CHECK(s.weights.at(0, 1) == 1.0);
  CHECK(s.weights.at(1, 0) == 1.0);

  FuzzyGraph g{csr(3, {{{1, 0.5}}, {{2, 0.4}}, {{1, 1.0}}})};
  const auto sg = symmetrize(g);
  CHECK(sg.weights.at(0, 1) == doctest::Approx(0.5));
  CHECK(sg.weights.at(1, 2) == doctest::Approx(0.4 + 1.0 - 0.4));
  CHECK(sg.weights.nnz() == 4);
}

TEST_CASE("transition rows") {
  FuzzyGraph f{csr(4, {{{1, 1.0}, {2, 1.0}, {3, 1.0}}, {{0, 1.0}, {2, 0.5}, {3, 0.5}}, {{0, 1.0}}, {{0, 1.0}}})};
  const auto t = transition_matrix(f);
  const auto& p = t.probabilities();
  CHECK(p.at(0, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(p.at(0, 3) == doctest::Approx(1.0 / 3.0));
  CHECK(p.at(1, 0) == doctest::Approx(0.5));
  CHECK(p.at(1, 2) == doctest::Approx(0.25));
  CHECK(p.at(2, 0) == 1.0);
  CHECK(t.sample(2, 0.999) == 0);
  CHECK(t.sample(1, 0.0) == 0);
  CHECK(t.sample(1, 0.6) == 2);
  CHECK(t.sample(1, 0.8) == 3);

  FuzzyGraph empty{csr(2, {{{1, 1.0}}, {}})};
  CHECK_CX_ERROR(transition_matrix(empty), EmptyRow);
}

TEST_CASE("level graph invariants") {
  const auto m = cx::testing::gaussian_noise(400, 10, 21);
  const auto lg = build_level_graphs(exact_knn(m, 12, Metric::Euclidean));
  const auto& p = lg.fuzzy.weights;
  for (std::size_t i = 0; i < p.rows; ++i) {
    double mx = 0.0;
    for (double v : p.row_values(i)) {
      CHECK(v > 0.0);
      CHECK(v <= 1.0);
      mx = std::max(mx, v);
    }
    CHECK(mx == 1.0);
    CHECK(p.at(i, lg.knn.neighbors(i)[0]) == 1.0);
    double sum = 0.0;
    for (double v : lg.transition.probabilities().row_values(i)) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
  const auto& w = lg.symmetric.weights;
  CHECK(w.transpose().sorted_by_column() == w.sorted_by_column());
  for (double v : w.values) {
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("knn from a dissimilarity matrix") {
  const std::vector<float> s{0, 0.2f, 0.9f, 0.2f, 0, 0.5f, 0.9f, 0.5f, 0};
  const auto g = knn_from_dissimilarity(s, 3, 2);
  CHECK(g.neighbors(0)[0] == 1);
  CHECK(g.neighbors(0)[1] == 2);
  CHECK(g.distances_of(2)[0] == doctest::Approx(0.5));
}
