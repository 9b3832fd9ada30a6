#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "cx/hierarchy.hpp"
#include "cx/ingest.hpp"
#include "cx/layout.hpp"
#include "cx/neighbor_graph.hpp"

namespace cx {

/// 2-D distance from each point to its m-th nearest other point.
std::vector<double> outlier_scores(const Positions& positions, std::size_t m);

/// Point indices ordered by descending score (ties by index).
std::vector<std::size_t> triage_order(const std::vector<double>& scores);

/// Region size of every node on `level` (>= 1), keyed by global node id.
std::map<std::uint32_t, std::size_t> region_sizes(const Hierarchy& hierarchy, std::size_t level);

/// Connected components (size >= 2) of the graph joining rows whose cosine
/// similarity is >= threshold. Members ascending; groups ordered by their
/// smallest member.
std::vector<std::vector<std::uint32_t>> duplicate_groups(const EmbeddingMatrix& matrix, double threshold,
                                                         std::size_t threads = 1);

/// Rank-based trustworthiness of `positions` against the high-dimensional
/// neighborhoods of `matrix`. With `sample_points` > 0 and smaller than n,
/// the sum runs over a seeded subset of points (normalized accordingly).
double trustworthiness(const EmbeddingMatrix& matrix, Metric metric, const Positions& positions,
                       std::size_t m, std::size_t sample_points = 0, std::uint64_t seed = 42,
                       std::size_t threads = 1);

/// Trustworthiness for a level's layout, using the level's feature rows.
double level_trustworthiness(const EmbeddingMatrix& matrix, Metric metric, const Hierarchy& hierarchy,
                             const LevelEmbedding& embedding, std::size_t m, std::size_t sample_points = 0,
                             std::uint64_t seed = 42);

}  // namespace cx
