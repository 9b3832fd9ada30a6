#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "cx/ingest.hpp"
#include "cx/sparse.hpp"

namespace cx {

enum class Metric { Cosine, Euclidean };

Metric parse_metric(std::string_view name);
std::string_view to_string(Metric metric);

/// k nearest neighbors per node, self excluded, ascending by distance
/// (ties by ascending node id). Row i occupies [i*k, (i+1)*k).
struct KnnGraph {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> distances;

  std::span<const std::uint32_t> neighbors(std::size_t i) const { return {indices.data() + i * k, k}; }
  std::span<const double> distances_of(std::size_t i) const { return {distances.data() + i * k, k}; }

  bool operator==(const KnnGraph&) const = default;
};

struct KnnOptions {
  /// Exact brute force at or below this many rows, neighbor descent above.
  std::size_t exact_threshold = 20000;
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  std::size_t max_iterations = 16;
  /// Neighbor descent stops once fewer than delta*n*k heap updates happen in a round.
  double delta = 0.001;
};

/// Distance between two rows under `metric`; cosine distance is 1 - cos.
double distance(std::span<const float> a, std::span<const float> b, Metric metric);

KnnGraph build_knn(const EmbeddingMatrix& matrix, std::size_t k, Metric metric,
                   const KnnOptions& options = {});
KnnGraph exact_knn(const EmbeddingMatrix& matrix, std::size_t k, Metric metric,
                   std::size_t threads = 1);
KnnGraph approximate_knn(const EmbeddingMatrix& matrix, std::size_t k, Metric metric,
                         const KnnOptions& options = {});

/// kNN over a precomputed dense n x n dissimilarity (row-major), self excluded.
KnnGraph knn_from_dissimilarity(std::span<const float> dissimilarity, std::size_t n, std::size_t k);

struct SmoothKnnOptions {
  double tol = 1e-5;
  std::size_t max_iter = 64;
  double min_sigma = 1e-3;
  double max_sigma = 1e6;

  bool operator==(const SmoothKnnOptions&) const = default;
};

struct SmoothKnnResult {
  double rho = 0.0;
  double sigma = 1.0;
  /// Target log2(k) is not reachable inside [min_sigma, max_sigma].
  bool degenerate = false;
};

/// Finds rho = nearest distance and sigma with
/// sum_j exp(-max(0, d_j - rho) / sigma) = log2(k), k = distances.size(),
/// by bisection on log(sigma).
SmoothKnnResult calibrate_smooth_knn(std::span<const double> distances,
                                     const SmoothKnnOptions& options = {});

struct SmoothKnnParams {
  std::vector<double> rho;
  std::vector<double> sigma;
  std::vector<std::uint8_t> degenerate;

  bool operator==(const SmoothKnnParams&) const = default;
};

SmoothKnnParams calibrate_all(const KnnGraph& knn, const SmoothKnnOptions& options = {},
                              std::size_t threads = 1);

/// Directed membership strengths p_ij, one row per node, support N_k(i),
/// entries in the kNN row's distance order.
struct FuzzyGraph {
  CsrMatrix weights;
  bool operator==(const FuzzyGraph&) const = default;
};

/// Fuzzy union w_ij = p_ij + p_ji - p_ij * p_ji; rows ordered by column.
struct SymmetricGraph {
  CsrMatrix weights;
  std::size_t size() const { return weights.rows; }
  bool operator==(const SymmetricGraph&) const = default;
};

/// Row-stochastic T_ij = p_ij / sum_m p_im with per-row cumulative sums for sampling.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;
  explicit TransitionMatrix(CsrMatrix probabilities);

  const CsrMatrix& probabilities() const { return probs_; }
  std::size_t size() const { return probs_.rows; }

  /// Next node from `i` given u uniform in [0, 1). Returns i itself for rows
  /// without support.
  std::uint32_t sample(std::size_t i, double u) const;

 private:
  CsrMatrix probs_;
  std::vector<double> cumulative_;
};

double fuzzy_weight(double distance, double rho, double sigma);

std::pair<FuzzyGraph, SymmetricGraph> fuzzy_graph(const KnnGraph& knn, const SmoothKnnParams& params);
SymmetricGraph symmetrize(const FuzzyGraph& fuzzy);
TransitionMatrix transition_matrix(const FuzzyGraph& fuzzy);

/// kNN -> calibration -> fuzzy graph -> transition matrix, as one bundle.
struct LevelGraphs {
  KnnGraph knn;
  SmoothKnnParams params;
  FuzzyGraph fuzzy;
  SymmetricGraph symmetric;
  TransitionMatrix transition;
};

LevelGraphs build_level_graphs(KnnGraph knn, const SmoothKnnOptions& options = {},
                               std::size_t threads = 1);

}  // namespace cx
