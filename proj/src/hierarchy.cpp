#include "cx/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <string>

#include "cx/error.hpp"
#include "cx/parallel.hpp"
#include "cx/random.hpp"

namespace cx {
namespace {

// Stream purposes, mixed into every derived seed.
constexpr std::uint64_t kVisitStream = 1;
constexpr std::uint64_t kInfluenceStream = 2;
constexpr std::uint64_t kRepresentationStream = 3;
constexpr std::uint64_t kKnnStream = 4;

std::vector<std::int32_t> landmark_slots(std::size_t n, std::span<const std::uint32_t> landmarks) {
  std::vector<std::int32_t> slot(n, -1);
  for (std::size_t r = 0; r < landmarks.size(); ++r) {
    if (landmarks[r] >= n) throw Error(ErrorCode::UnknownLandmark, "landmark outside the graph");
    slot[landmarks[r]] = static_cast<std::int32_t>(r);
  }
  return slot;
}

// Breadth-first search from `start`, following `next(node)` edges. At the first
// depth that contains a landmark, returns the one with the greatest path
// strength (max product of edge weights), lowest id on ties.
template <typename Neighbors>
std::optional<std::uint32_t> strongest_nearest_landmark(std::size_t n, std::uint32_t start,
                                                        const std::vector<std::int32_t>& slot,
                                                        Neighbors&& next) {
  std::vector<double> strength(n, -1.0);
  std::vector<std::uint32_t> frontier{start};
  strength[start] = 1.0;
  std::vector<std::uint8_t> seen(n, 0);
  seen[start] = 1;
  while (!frontier.empty()) {
    std::map<std::uint32_t, double> layer;
    for (auto v : frontier) {
      next(v, [&](std::uint32_t u, double w) {
        if (seen[u]) return;
        const double s = strength[v] * w;
        auto [it, inserted] = layer.emplace(u, s);
        if (!inserted) it->second = std::max(it->second, s);
      });
    }
    std::optional<std::uint32_t> best;
    double best_strength = -1.0;
    for (const auto& [u, s] : layer) {
      if (slot[u] >= 0 && s > best_strength) {
        best = u;
        best_strength = s;
      }
    }
    if (best) return best;
    frontier.clear();
    for (const auto& [u, s] : layer) {
      seen[u] = 1;
      strength[u] = s;
      frontier.push_back(u);
    }
  }
  return std::nullopt;
}

}  // namespace

std::vector<std::size_t> level_sizes(std::size_t n, const BuildConfig& config) {
  if (config.k < 2) throw Error(ErrorCode::InvalidConfig, "k must be >= 2");
  if (config.walks_per_node < 1) throw Error(ErrorCode::InvalidConfig, "walks_per_node must be >= 1");
  if (config.walk_length < 1) throw Error(ErrorCode::InvalidConfig, "walk_length must be >= 1");
  if (!config.level_fractions.empty() && !config.level_counts.empty())
    throw Error(ErrorCode::InvalidConfig, "give either level fractions or level counts, not both");
  std::vector<std::size_t> sizes{n};
  if (!config.level_counts.empty()) {
    for (std::size_t c : config.level_counts) {
      if (c < kMinLevelSize)
        throw Error(ErrorCode::LevelTooSmall, "level of " + std::to_string(c) + " nodes",
                    {static_cast<std::int64_t>(c)});
      if (c >= sizes.back())
        throw Error(ErrorCode::InvalidConfig, "landmark counts must strictly decrease");
      sizes.push_back(c);
    }
    return sizes;
  }
  for (double f : config.level_fractions) {
    if (!(f > 0.0 && f < 1.0))
      throw Error(ErrorCode::InvalidConfig, "level fractions must lie in (0, 1)");
    const auto next = static_cast<std::size_t>(std::floor(f * static_cast<double>(sizes.back()) + 0.5));
    if (next < kMinLevelSize)
      throw Error(ErrorCode::LevelTooSmall, "level of " + std::to_string(next) + " nodes",
                  {static_cast<std::int64_t>(next)});
    if (next >= sizes.back())
      throw Error(ErrorCode::InvalidConfig, "level sizes must strictly decrease");
    sizes.push_back(next);
  }
  return sizes;
}

VisitCounts random_walk_visit_counts(const TransitionMatrix& transition, std::size_t walks_per_node,
                                     std::size_t walk_length, std::uint64_t seed, std::size_t threads) {
  const std::size_t n = transition.size();
  const std::size_t workers = std::min(resolve_threads(threads), std::max<std::size_t>(n, 1));
  std::vector<VisitCounts> partial(workers, VisitCounts(n, 0));
  parallel_for(n, workers, [&](std::size_t b, std::size_t e, std::size_t w) {
    auto& counts = partial[w];
    for (std::size_t origin = b; origin < e; ++origin) {
      Rng rng(derive_seed(seed, kVisitStream, origin));
      for (std::size_t walk = 0; walk < walks_per_node; ++walk) {
        std::size_t at = origin;
        for (std::size_t step = 0; step < walk_length; ++step) {
          at = transition.sample(at, rng.uniform());
          ++counts[at];
        }
      }
    }
  });
  VisitCounts total(n, 0);
  for (const auto& p : partial)
    for (std::size_t i = 0; i < n; ++i) total[i] += p[i];
  return total;
}

std::vector<std::uint32_t> select_landmarks(std::span<const std::uint64_t> counts, std::size_t n_landmarks) {
  if (n_landmarks < 1 || n_landmarks > counts.size())
    throw Error(ErrorCode::TooManyLandmarks,
                std::to_string(n_landmarks) + " landmarks requested from " +
                    std::to_string(counts.size()) + " nodes",
                {static_cast<std::int64_t>(n_landmarks), static_cast<std::int64_t>(counts.size())});
  std::vector<std::uint32_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0u);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_landmarks), order.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      return counts[a] > counts[b] || (counts[a] == counts[b] && a < b);
                    });
  order.resize(n_landmarks);
  return order;
}

std::vector<std::uint32_t> assign_influence(const TransitionMatrix& transition,
                                            std::span<const std::uint32_t> landmarks,
                                            std::size_t walks_per_node, std::size_t walk_length,
                                            std::uint64_t seed, std::size_t threads) {
  if (landmarks.empty()) throw Error(ErrorCode::EmptySelection, "no landmarks to assign to");
  const std::size_t n = transition.size();
  const auto slot = landmark_slots(n, landmarks);
  const CsrMatrix& t = transition.probabilities();
  std::vector<std::uint32_t> owner(n);
  std::vector<std::uint8_t> unresolved(n, 0);

  parallel_for(n, threads, [&](std::size_t b, std::size_t e, std::size_t) {
    std::vector<std::uint32_t> hits(landmarks.size());
    for (std::size_t i = b; i < e; ++i) {
      if (slot[i] >= 0) {
        owner[i] = static_cast<std::uint32_t>(i);
        continue;
      }
      std::fill(hits.begin(), hits.end(), 0u);
      Rng rng(derive_seed(seed, kInfluenceStream, i));
      for (std::size_t walk = 0; walk < walks_per_node; ++walk) {
        std::size_t at = i;
        for (std::size_t step = 0; step < walk_length; ++step) {
          at = transition.sample(at, rng.uniform());
          if (slot[at] >= 0) {
            ++hits[static_cast<std::size_t>(slot[at])];
            break;
          }
        }
      }
      std::optional<std::uint32_t> best;
      std::uint32_t best_hits = 0;
      for (std::size_t r = 0; r < landmarks.size(); ++r) {
        if (hits[r] == 0) continue;
        if (hits[r] > best_hits || (hits[r] == best_hits && landmarks[r] < *best)) {
          best = landmarks[r];
          best_hits = hits[r];
        }
      }
      if (best) {
        owner[i] = *best;
        continue;
      }
      const auto directed = strongest_nearest_landmark(
          n, static_cast<std::uint32_t>(i), slot, [&](std::uint32_t v, auto&& visit) {
            const auto cols = t.row_cols(v);
            const auto vals = t.row_values(v);
            for (std::size_t x = 0; x < cols.size(); ++x) visit(cols[x], vals[x]);
          });
      if (directed) {
        owner[i] = *directed;
      } else {
        unresolved[i] = 1;
      }
    }
  });

  if (std::find(unresolved.begin(), unresolved.end(), 1) != unresolved.end()) {
    // Nodes whose out-edges never reach a landmark: retry over edges in both
    // directions, then fall back to the top-ranked landmark.
    const CsrMatrix tt = t.transpose();
    for (std::size_t i = 0; i < n; ++i) {
      if (!unresolved[i]) continue;
      const auto both = strongest_nearest_landmark(
          n, static_cast<std::uint32_t>(i), slot, [&](std::uint32_t v, auto&& visit) {
            for (const CsrMatrix* m : {&t, &tt}) {
              const auto cols = m->row_cols(v);
              const auto vals = m->row_values(v);
              for (std::size_t x = 0; x < cols.size(); ++x) visit(cols[x], vals[x]);
            }
          });
      owner[i] = both ? *both : landmarks.front();
    }
  }
  return owner;
}

RepresentationMatrix representation_matrix(const TransitionMatrix& transition,
                                           std::span<const std::uint32_t> landmarks,
                                           std::size_t walks_per_node, std::size_t walk_length,
                                           std::uint64_t seed, std::size_t threads) {
  if (landmarks.empty()) throw Error(ErrorCode::EmptySelection, "no landmarks for R");
  const std::size_t n = transition.size();
  const std::size_t m = landmarks.size();
  std::vector<std::vector<std::pair<std::uint32_t, double>>> cols(m);
  parallel_for(m, threads, [&](std::size_t b, std::size_t e, std::size_t) {
    std::map<std::uint32_t, std::uint64_t> visits;
    for (std::size_t r = b; r < e; ++r) {
      const std::uint32_t origin = landmarks[r];
      if (origin >= n) throw Error(ErrorCode::UnknownLandmark, "landmark outside the graph");
      visits.clear();
      Rng rng(derive_seed(seed, kRepresentationStream, origin));
      std::uint64_t total = 0;
      for (std::size_t walk = 0; walk < walks_per_node; ++walk) {
        std::size_t at = origin;
        for (std::size_t step = 0; step < walk_length; ++step) {
          at = transition.sample(at, rng.uniform());
          ++visits[static_cast<std::uint32_t>(at)];
          ++total;
        }
      }
      auto& col = cols[r];
      col.reserve(visits.size());
      for (const auto& [node, c] : visits)
        col.emplace_back(node, static_cast<double>(c) / static_cast<double>(total));
    }
  });
  RepresentationMatrix rep;
  auto& c = rep.columns;
  c.rows = m;
  c.cols = n;
  c.row_ptr.assign(1, 0);
  for (const auto& col : cols) {
    for (const auto& [node, v] : col) {
      c.col_idx.push_back(node);
      c.values.push_back(v);
    }
    c.row_ptr.push_back(c.col_idx.size());
  }
  return rep;
}

std::vector<double> overlap_matrix(const RepresentationMatrix& r) {
  const std::size_t m = r.landmark_count();
  const CsrMatrix by_node = r.columns.transpose();  // node -> (landmark, value), landmark ascending
  std::vector<double> g(m * m, 0.0);
  for (std::size_t i = 0; i < by_node.rows; ++i) {
    const auto ls = by_node.row_cols(i);
    const auto vs = by_node.row_values(i);
    for (std::size_t x = 0; x < ls.size(); ++x)
      for (std::size_t y = x; y < ls.size(); ++y) g[ls[x] * m + ls[y]] += vs[x] * vs[y];
  }
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b) g[b * m + a] = g[a * m + b];
  return g;
}

LandmarkSimilarity landmark_similarity(const RepresentationMatrix& r) {
  const std::size_t m = r.landmark_count();
  const auto g = overlap_matrix(r);
  const double peak = g.empty() ? 0.0 : *std::max_element(g.begin(), g.end());
  if (!(peak > 0.0)) throw Error(ErrorCode::AllZeroR, "representation matrix has no mass");
  LandmarkSimilarity s{m, std::vector<float>(m * m)};
  for (std::size_t i = 0; i < m * m; ++i) {
    const double v = 1.0 - g[i] / peak;
    s.values[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return s;
}

std::unordered_map<std::uint32_t, std::uint32_t> local_positions(const Level& level) {
  std::unordered_map<std::uint32_t, std::uint32_t> pos;
  pos.reserve(level.nodes.size());
  for (std::size_t i = 0; i < level.nodes.size(); ++i)
    pos.emplace(level.nodes[i], static_cast<std::uint32_t>(i));
  return pos;
}

std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> influence_fibers(const Level& level) {
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> fibers;
  for (auto l : level.landmarks) fibers[l];
  for (std::size_t i = 0; i < level.influence.size(); ++i)
    fibers[level.influence[i]].push_back(level.nodes[i]);
  return fibers;
}

LevelGraphs graphs_from_similarity(const LandmarkSimilarity& s, std::size_t k,
                                   const SmoothKnnOptions& options) {
  if (s.n < 3) throw Error(ErrorCode::LevelTooSmall, "level needs at least 3 nodes for a graph");
  const std::size_t kk = std::min(k, s.n - 1);
  return build_level_graphs(knn_from_dissimilarity(s.values, s.n, kk), options);
}

Hierarchy build_hierarchy(const EmbeddingMatrix& matrix, const BuildConfig& config) {
  const auto sizes = level_sizes(matrix.rows, config);
  Hierarchy h;
  h.config = config;
  h.levels.resize(sizes.size());

  KnnOptions knn_opts;
  knn_opts.exact_threshold = config.exact_threshold;
  knn_opts.seed = derive_seed(config.seed, kKnnStream);
  knn_opts.threads = config.threads;
  LevelGraphs graphs = build_level_graphs(build_knn(matrix, config.k, config.metric, knn_opts),
                                          config.smooth, config.threads);

  auto& base = h.levels[0];
  base.nodes.resize(matrix.rows);
  std::iota(base.nodes.begin(), base.nodes.end(), 0u);
  base.graph = graphs.symmetric;

  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    auto& cur = h.levels[l];
    const auto& t = graphs.transition;
    const auto counts = random_walk_visit_counts(t, config.walks_per_node, config.walk_length,
                                                 derive_seed(config.seed, kVisitStream, l), config.threads);
    const auto chosen = select_landmarks(counts, sizes[l + 1]);
    const auto owner = assign_influence(t, chosen, config.walks_per_node, config.walk_length,
                                        derive_seed(config.seed, kInfluenceStream, l), config.threads);
    const auto rep = representation_matrix(t, chosen, config.walks_per_node, config.walk_length,
                                           derive_seed(config.seed, kRepresentationStream, l),
                                           config.threads);

    cur.landmarks.reserve(chosen.size());
    for (auto c : chosen) cur.landmarks.push_back(cur.nodes[c]);
    cur.influence.reserve(owner.size());
    for (auto o : owner) cur.influence.push_back(cur.nodes[o]);

    auto& next = h.levels[l + 1];
    next.nodes = cur.landmarks;
    next.similarity = landmark_similarity(rep);
    graphs = graphs_from_similarity(next.similarity, config.k, config.smooth);
    next.graph = graphs.symmetric;
  }
  return h;
}

}  // namespace cx
