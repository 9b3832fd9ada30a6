#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "cx/ingest.hpp"
#include "cx/layout_params.hpp"
#include "cx/neighbor_graph.hpp"
#include "cx/sparse.hpp"

namespace cx {

struct BuildConfig {
  std::size_t k = 15;
  /// Each entry shrinks the previous level: size_{l+1} = round(f * size_l).
  std::vector<double> level_fractions;
  /// Absolute landmark counts per level; used instead of fractions when non-empty.
  std::vector<std::size_t> level_counts;
  std::size_t walks_per_node = 10;
  std::size_t walk_length = 10;
  Metric metric = Metric::Cosine;
  std::uint64_t seed = 42;
  std::size_t exact_threshold = 20000;
  SmoothKnnOptions smooth;
  LayoutParams layout;
  /// Worker count for walks and kNN (0 = hardware). Results do not depend on it.
  std::size_t threads = 0;

  bool operator==(const BuildConfig&) const = default;
};

/// Validates the config against n points and returns every level size,
/// level 0 first. Throws InvalidConfig or LevelTooSmall.
std::vector<std::size_t> level_sizes(std::size_t n, const BuildConfig& config);

inline constexpr std::size_t kMinLevelSize = 10;

using VisitCounts = std::vector<std::uint64_t>;

/// walks_per_node walks from every node, walk_length steps each; every step
/// increments the visited node (the origin is not counted). Node i draws from
/// its own stream derived from (seed, i).
VisitCounts random_walk_visit_counts(const TransitionMatrix& transition, std::size_t walks_per_node,
                                     std::size_t walk_length, std::uint64_t seed,
                                     std::size_t threads = 1);

/// Top n_landmarks nodes by count, ties to the lower id, in rank order.
std::vector<std::uint32_t> select_landmarks(std::span<const std::uint64_t> counts,
                                            std::size_t n_landmarks);

/// Landmark (node id) owning each node. Landmarks own themselves; other nodes
/// go to the landmark their walks hit first most often, then to the strongest
/// landmark at the shallowest breadth-first depth when no walk hits one.
std::vector<std::uint32_t> assign_influence(const TransitionMatrix& transition,
                                            std::span<const std::uint32_t> landmarks,
                                            std::size_t walks_per_node, std::size_t walk_length,
                                            std::uint64_t seed, std::size_t threads = 1);

/// Sparse R stored column-wise: row u of `columns` is the normalized visit
/// distribution of walks started at landmark u (column indices are node ids).
struct RepresentationMatrix {
  CsrMatrix columns;

  std::size_t landmark_count() const { return columns.rows; }
  std::size_t node_count() const { return columns.cols; }
};

RepresentationMatrix representation_matrix(const TransitionMatrix& transition,
                                           std::span<const std::uint32_t> landmarks,
                                           std::size_t walks_per_node, std::size_t walk_length,
                                           std::uint64_t seed, std::size_t threads = 1);

/// Dense row-major R^T R.
std::vector<double> overlap_matrix(const RepresentationMatrix& r);

/// Dense symmetric dissimilarity over landmarks, S = 1 - R^T R / max(R^T R).
struct LandmarkSimilarity {
  std::size_t n = 0;
  std::vector<float> values;

  float at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  bool operator==(const LandmarkSimilarity&) const = default;
};

LandmarkSimilarity landmark_similarity(const RepresentationMatrix& r);

struct Level {
  /// Global row ids of this level's points.
  std::vector<std::uint32_t> nodes;
  /// Nodes promoted to the next level, in rank order (empty at the top).
  std::vector<std::uint32_t> landmarks;
  /// Owning landmark (global row id) for each entry of `nodes` (empty at the top).
  std::vector<std::uint32_t> influence;
  /// Dissimilarity between this level's nodes (levels >= 1 only).
  LandmarkSimilarity similarity;
  /// Undirected graph used for layout and drill-down.
  SymmetricGraph graph;

  std::size_t size() const { return nodes.size(); }
  bool operator==(const Level&) const = default;
};

struct Hierarchy {
  BuildConfig config;
  std::vector<Level> levels;

  std::size_t depth() const { return levels.size(); }
  bool operator==(const Hierarchy&) const = default;
};

/// Global row id -> position within `level.nodes`.
std::unordered_map<std::uint32_t, std::uint32_t> local_positions(const Level& level);

/// Members of each landmark's region, keyed by landmark (global id), in node order.
std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> influence_fibers(const Level& level);

/// Level graph construction for levels >= 1: k smallest dissimilarities per
/// node (k clipped to size - 1), then smooth-kNN calibration.
LevelGraphs graphs_from_similarity(const LandmarkSimilarity& s, std::size_t k,
                                   const SmoothKnnOptions& options = {});

Hierarchy build_hierarchy(const EmbeddingMatrix& matrix, const BuildConfig& config);

}  // namespace cx
