#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cx/hierarchy.hpp"
#include "cx/layout_params.hpp"
#include "cx/neighbor_graph.hpp"

namespace cx {

using Point2 = std::array<float, 2>;
using Positions = std::vector<Point2>;

/// Least-squares fit of 1 / (1 + a t^(2b)) to the target curve (1 up to
/// min_dist, exp(-(t - min_dist) / spread) beyond) on [0, 3 * spread].
CurveParams fit_curve_params(double min_dist, double spread);

/// Component label per node (labels ordered by smallest member) and component count.
std::vector<std::uint32_t> connected_components(const SymmetricGraph& graph, std::size_t& count);

/// Spectral (Laplacian eigenvector) or uniform random start inside [-10, 10]^2.
/// Disconnected components are laid out in separate grid cells. Spectral
/// failures fall back to random with a warning on stderr.
Positions initialize_positions(const SymmetricGraph& graph, InitMethod method, std::uint64_t seed);

struct OptimizeParams {
  std::size_t epochs = 500;
  double initial_lr = 1.0;
  std::size_t neg_samples = 5;
  CurveParams curve;
  bool deterministic = true;
  std::size_t threads = 0;
  /// Per-node learning-rate multiplier (empty = 1 for all). Drill-down uses
  /// it to soft-pin anchor landmarks.
  std::vector<float> lr_scale;
  /// Edge and non-edge pairs in the fixed objective sample.
  std::size_t objective_pairs = 2000;
};

struct LevelEmbedding {
  std::size_t level = 0;
  Positions positions;
  std::size_t epoch_count = 0;
  /// Sampled cross-entropy, first entry before any update, last after the final epoch.
  std::vector<double> objective_trace;

  bool operator==(const LevelEmbedding&) const = default;
};

/// Fixed sample of edges and non-edges used to estimate the layout objective.
struct ObjectiveSample {
  std::vector<std::array<std::uint32_t, 2>> edges;
  std::vector<double> edge_weights;
  std::vector<std::array<std::uint32_t, 2>> non_edges;
};

ObjectiveSample sample_objective_pairs(const SymmetricGraph& graph, std::size_t pairs, std::uint64_t seed);
double sampled_cross_entropy(const ObjectiveSample& sample, const Positions& positions, const CurveParams& curve);

/// Stochastic layout optimization with edge sampling proportional to weight,
/// negative sampling and linearly decaying learning rate.
LevelEmbedding optimize_positions(const SymmetricGraph& graph, Positions positions,
                                  const OptimizeParams& params, std::uint64_t seed);

OptimizeParams optimize_params_for(const LayoutParams& layout, std::size_t n_points);

LevelEmbedding embed_level(const Hierarchy& hierarchy, std::size_t level, const LayoutParams& params,
                           std::uint64_t seed);
std::vector<LevelEmbedding> embed_all_levels(const Hierarchy& hierarchy, const LayoutParams& params,
                                             std::uint64_t seed);

struct SubEmbedding {
  /// Level the selected landmarks live on; members come from parent_level - 1.
  std::size_t parent_level = 0;
  std::vector<std::uint32_t> selected_landmarks;
  /// Union of the selected landmarks' regions, in lower-level node order.
  std::vector<std::uint32_t> member_nodes;
  /// Owning landmark of each member.
  std::vector<std::uint32_t> member_landmarks;
  Positions positions;
};

/// Members of the selected landmarks' regions at level - 1, validated and
/// in lower-level node order. Throws EmptySelection, BadLevel, UnknownLandmark.
SubEmbedding drill_down_members(const Hierarchy& hierarchy, std::size_t level,
                                std::span<const std::uint32_t> landmark_ids);

/// Re-optimizes the members on the lower level's graph, starting at their
/// landmark's position (plus jitter of radius 0.1) with anchors soft-pinned
/// at a tenth of the learning rate.
SubEmbedding drill_down(const Hierarchy& hierarchy, std::span<const LevelEmbedding> embeddings,
                        std::size_t level, std::span<const std::uint32_t> landmark_ids,
                        const LayoutParams& params, std::uint64_t seed);

/// Same membership, positions taken from the stored lower-level layout.
SubEmbedding reveal_stored(const Hierarchy& hierarchy, std::span<const LevelEmbedding> embeddings,
                           std::size_t level, std::span<const std::uint32_t> landmark_ids);

inline constexpr float kAnchorLrScale = 0.1f;
inline constexpr double kDrillJitterRadius = 0.1;

namespace detail {

double clip_gradient(double g);

/// Attractive move along edge (i, j): both ends step toward each other,
/// each scaled by its own learning-rate multiplier.
void attract(Point2& head, Point2& tail, const CurveParams& curve, double lr, double head_scale,
             double tail_scale);

/// Repulsive move of `head` away from `other`; only `head` moves.
void repel(Point2& head, const Point2& other, const CurveParams& curve, double lr, double head_scale);

}  // namespace detail

}  // namespace cx
