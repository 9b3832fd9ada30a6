#include "cx/analytics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cx/error.hpp"
#include "cx/parallel.hpp"
#include "cx/random.hpp"

namespace cx {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

double dist2d(const Point2& a, const Point2& b) {
  const double dx = static_cast<double>(a[0]) - b[0];
  const double dy = static_cast<double>(a[1]) - b[1];
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

std::vector<double> outlier_scores(const Positions& positions, std::size_t m) {
  const std::size_t n = positions.size();
  if (m < 1 || m >= n)
    throw Error(ErrorCode::MTooLarge, "m = " + std::to_string(m) + " needs more than " + std::to_string(n) + " points",
                {static_cast<std::int64_t>(m), static_cast<std::int64_t>(n)});
  std::vector<double> scores(n);
  std::vector<double> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row.push_back(dist2d(positions[i], positions[j]));
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(m - 1), row.end());
    scores[i] = row[m - 1];
  }
  return scores;
}

std::vector<std::size_t> triage_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::map<std::uint32_t, std::size_t> region_sizes(const Hierarchy& hierarchy, std::size_t level) {
  if (level < 1 || level >= hierarchy.depth())
    throw Error(ErrorCode::BadLevel, "region sizes need a level in [1, depth)", {static_cast<std::int64_t>(level)});
  std::map<std::uint32_t, std::size_t> sizes;
  for (auto node : hierarchy.levels[level].nodes) sizes[node] = 0;
  for (auto owner : hierarchy.levels[level - 1].influence) ++sizes[owner];
  return sizes;
}

std::vector<std::vector<std::uint32_t>> duplicate_groups(const EmbeddingMatrix& matrix, double threshold,
                                                         std::size_t threads) {
  const std::size_t n = matrix.rows;
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  if (threshold <= 1.0 + 1e-6 && n > 1) {
    Eigen::Map<const RowMatrix> x(matrix.data.data(), static_cast<Eigen::Index>(n),
                                  static_cast<Eigen::Index>(matrix.dims));
    RowMatrix unit = x;
    unit.rowwise().normalize();
    // Float screening with a small margin, exact double check for candidates.
    const float screen = static_cast<float>(threshold) - 1e-4f;
    constexpr std::size_t kBlock = 256;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> found(blocks);
    parallel_for(blocks, threads, [&](std::size_t b0, std::size_t b1, std::size_t) {
      for (std::size_t b = b0; b < b1; ++b) {
        const std::size_t lo = b * kBlock;
        const std::size_t hi = std::min(n, lo + kBlock);
        const RowMatrix sim = unit.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)) *
                              unit.bottomRows(static_cast<Eigen::Index>(n - lo)).transpose();
        for (std::size_t i = lo; i < hi; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) {
            if (sim(static_cast<Eigen::Index>(i - lo), static_cast<Eigen::Index>(j - lo)) < screen) continue;
            const double cos = 1.0 - distance(matrix.row(i), matrix.row(j), Metric::Cosine);
            if (cos >= threshold)
              found[b].emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
          }
        }
      }
    });
    for (const auto& list : found)
      for (const auto& [i, j] : list) {
        const auto ri = find_root(parent, i), rj = find_root(parent, j);
        if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
      }
  }
  std::map<std::size_t, std::vector<std::uint32_t>> by_root;
  for (std::size_t i = 0; i < n; ++i) by_root[find_root(parent, i)].push_back(static_cast<std::uint32_t>(i));
  std::vector<std::vector<std::uint32_t>> groups;
  for (auto& [root, members] : by_root)
    if (members.size() >= 2) groups.push_back(std::move(members));
  return groups;
}

double trustworthiness(const EmbeddingMatrix& matrix, Metric metric, const Positions& positions, std::size_t m,
                       std::size_t sample_points, std::uint64_t seed, std::size_t threads) {
  const std::size_t n = matrix.rows;
  if (positions.size() != n)
    throw Error(ErrorCode::ShapeMismatch, "positions do not match matrix rows",
                {static_cast<std::int64_t>(positions.size()), static_cast<std::int64_t>(n)});
  if (m < 1 || 2 * n < 3 * m + 2)
    throw Error(ErrorCode::MTooLarge, "m = " + std::to_string(m) + " too large for " + std::to_string(n) + " points",
                {static_cast<std::int64_t>(m), static_cast<std::int64_t>(n)});

  std::vector<std::size_t> points(n);
  std::iota(points.begin(), points.end(), std::size_t{0});
  if (sample_points > 0 && sample_points < n) {
    Rng rng(seed);
    for (std::size_t i = 0; i < sample_points; ++i) std::swap(points[i], points[i + rng.below(n - i)]);
    points.resize(sample_points);
    std::sort(points.begin(), points.end());
  }

  std::vector<double> penalty(points.size(), 0.0);
  parallel_for(points.size(), threads, [&](std::size_t b, std::size_t e, std::size_t) {
    std::vector<std::pair<double, std::uint32_t>> high(n - 1), low(n - 1);
    std::vector<std::uint32_t> rank(n);
    for (std::size_t x = b; x < e; ++x) {
      const std::size_t i = points[x];
      std::size_t c = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        high[c] = {distance(matrix.row(i), matrix.row(j), metric), static_cast<std::uint32_t>(j)};
        low[c] = {dist2d(positions[i], positions[j]), static_cast<std::uint32_t>(j)};
        ++c;
      }
      std::sort(high.begin(), high.end());
      for (std::size_t r = 0; r < high.size(); ++r) rank[high[r].second] = static_cast<std::uint32_t>(r + 1);
      std::partial_sort(low.begin(), low.begin() + static_cast<std::ptrdiff_t>(m), low.end());
      double p = 0.0;
      for (std::size_t r = 0; r < m; ++r) {
        const auto j = low[r].second;
        if (rank[j] > m) p += static_cast<double>(rank[j] - m);
      }
      penalty[x] = p;
    }
  });
  const double total = std::accumulate(penalty.begin(), penalty.end(), 0.0);
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  const double scale = nn / static_cast<double>(points.size());
  return 1.0 - 2.0 / (nn * mm * (2.0 * nn - 3.0 * mm - 1.0)) * total * scale;
}

double level_trustworthiness(const EmbeddingMatrix& matrix, Metric metric, const Hierarchy& hierarchy,
                             const LevelEmbedding& embedding, std::size_t m, std::size_t sample_points,
                             std::uint64_t seed) {
  if (embedding.level >= hierarchy.depth()) throw Error(ErrorCode::BadLevel, "no such level");
  const auto& nodes = hierarchy.levels[embedding.level].nodes;
  if (nodes.size() == matrix.rows) return trustworthiness(matrix, metric, embedding.positions, m, sample_points, seed);
  EmbeddingMatrix sub(nodes.size(), matrix.dims);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto src = matrix.row(nodes[i]);
    std::copy(src.begin(), src.end(), sub.row(i).begin());
  }
  return trustworthiness(sub, metric, embedding.positions, m, sample_points, seed);
}

}  // namespace cx
