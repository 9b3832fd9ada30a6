#include "cx/neighbor_graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cx/error.hpp"
#include "cx/parallel.hpp"
#include "cx/random.hpp"

namespace cx {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Candidate {
  double dist;
  std::uint32_t id;
  bool operator<(const Candidate& o) const { return dist < o.dist || (dist == o.dist && id < o.id); }
};

void check_k(std::size_t n, std::size_t k) {
  if (k < 2) throw Error(ErrorCode::KTooSmall, "k must be >= 2, got " + std::to_string(k));
  if (k >= n)
    throw Error(ErrorCode::KTooLarge,
                "k = " + std::to_string(k) + " requires more than " + std::to_string(n) + " rows");
}

void check_metric(const EmbeddingMatrix& m, Metric metric) {
  if (metric != Metric::Cosine) return;
  for (std::size_t i = 0; i < m.rows; ++i) {
    const auto r = m.row(i);
    if (std::all_of(r.begin(), r.end(), [](float v) { return v == 0.0f; }))
      throw Error(ErrorCode::MetricUndefined,
                  "cosine distance undefined for zero row " + std::to_string(i),
                  {static_cast<std::int64_t>(i)});
  }
}

// Fixed-capacity sorted neighbor list used by neighbor descent.
struct NeighborHeap {
  std::vector<Candidate> items;
  std::vector<std::uint8_t> fresh;

  bool contains(std::uint32_t id) const {
    return std::any_of(items.begin(), items.end(), [&](const Candidate& c) { return c.id == id; });
  }

  bool push(Candidate c, std::size_t capacity) {
    if (items.size() == capacity && !(c < items.back())) return false;
    if (contains(c.id)) return false;
    auto pos = std::upper_bound(items.begin(), items.end(), c);
    const auto offset = pos - items.begin();
    items.insert(pos, c);
    fresh.insert(fresh.begin() + offset, 1);
    if (items.size() > capacity) {
      items.pop_back();
      fresh.pop_back();
    }
    return true;
  }
};

}  // namespace

Metric parse_metric(std::string_view name) {
  if (name == "cosine") return Metric::Cosine;
  if (name == "euclidean") return Metric::Euclidean;
  throw Error(ErrorCode::InvalidArgument, "unknown metric '" + std::string(name) + "'");
}

std::string_view to_string(Metric metric) {
  return metric == Metric::Cosine ? "cosine" : "euclidean";
}

double distance(std::span<const float> a, std::span<const float> b, Metric metric) {
  if (metric == Metric::Euclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      s += d * d;
    }
    return std::sqrt(s);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return std::max(0.0, 1.0 - dot / std::sqrt(na * nb));
}

KnnGraph exact_knn(const EmbeddingMatrix& matrix, std::size_t k, Metric metric, std::size_t threads) {
  const std::size_t n = matrix.rows;
  check_k(n, k);
  check_metric(matrix, metric);

  Eigen::Map<const RowMatrix> x(matrix.data.data(), static_cast<Eigen::Index>(n),
                                static_cast<Eigen::Index>(matrix.dims));
  RowMatrix base = x;
  if (metric == Metric::Cosine) base.rowwise().normalize();
  const Eigen::VectorXf sq = base.rowwise().squaredNorm();

  // Screen with a float GEMM, then rescore a few extra candidates in double
  // so near-ties are ordered exactly.
  const std::size_t screen = std::min(n - 1, k + 8);
  KnnGraph g{n, k, std::vector<std::uint32_t>(n * k), std::vector<double>(n * k)};
  constexpr std::size_t kBlock = 256;
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  parallel_for(blocks, threads, [&](std::size_t b0, std::size_t b1, std::size_t) {
    std::vector<Candidate> row;
    for (std::size_t b = b0; b < b1; ++b) {
      const std::size_t lo = b * kBlock;
      const std::size_t hi = std::min(n, lo + kBlock);
      const RowMatrix gram = base.middleRows(static_cast<Eigen::Index>(lo),
                                             static_cast<Eigen::Index>(hi - lo)) *
                             base.transpose();
      for (std::size_t i = lo; i < hi; ++i) {
        row.clear();
        row.reserve(n - 1);
        const auto gi = static_cast<Eigen::Index>(i - lo);
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          const double proxy = sq[static_cast<Eigen::Index>(i)] + sq[static_cast<Eigen::Index>(j)] -
                               2.0 * gram(gi, static_cast<Eigen::Index>(j));
          row.push_back({proxy, static_cast<std::uint32_t>(j)});
        }
        std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(screen - 1), row.end());
        row.resize(screen);
        for (auto& c : row) c.dist = distance(matrix.row(i), matrix.row(c.id), metric);
        std::sort(row.begin(), row.end());
        for (std::size_t e = 0; e < k; ++e) {
          g.indices[i * k + e] = row[e].id;
          g.distances[i * k + e] = row[e].dist;
        }
      }
    }
  });
  return g;
}

KnnGraph approximate_knn(const EmbeddingMatrix& matrix, std::size_t k, Metric metric,
                         const KnnOptions& options) {
  const std::size_t n = matrix.rows;
  check_k(n, k);
  check_metric(matrix, metric);

  // Wider internal lists raise recall at modest cost; the result is truncated to k.
  const std::size_t cap = std::min(n - 1, k + std::max<std::size_t>(8, k / 2));
  const std::size_t sample = cap;
  Rng rng(derive_seed(options.seed, 0x6e6e64));

  std::vector<NeighborHeap> heaps(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& h = heaps[i];
    while (h.items.size() < cap) {
      const auto j = static_cast<std::uint32_t>(rng.below(n));
      if (j == i || h.contains(j)) continue;
      h.push({distance(matrix.row(i), matrix.row(j), metric), j}, cap);
    }
  }

  struct Pair {
    std::uint32_t a, b;
    double dist;
  };
  std::vector<std::vector<std::uint32_t>> fresh_lists(n), old_lists(n);
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    for (auto& l : fresh_lists) l.clear();
    for (auto& l : old_lists) l.clear();
    // Forward lists: sampled fresh entries (then marked old) and all old entries.
    for (std::size_t i = 0; i < n; ++i) {
      auto& h = heaps[i];
      std::size_t taken = 0;
      for (std::size_t e = 0; e < h.items.size(); ++e) {
        if (h.fresh[e]) {
          if (taken < sample) {
            fresh_lists[i].push_back(h.items[e].id);
            h.fresh[e] = 0;
            ++taken;
          }
        } else {
          old_lists[i].push_back(h.items[e].id);
        }
      }
    }
    // Reverse lists, capped by reservoir-free truncation in node order.
    std::vector<std::vector<std::uint32_t>> rev_fresh(n), rev_old(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto j : fresh_lists[i])
        if (rev_fresh[j].size() < sample) rev_fresh[j].push_back(static_cast<std::uint32_t>(i));
      for (auto j : old_lists[i])
        if (rev_old[j].size() < sample) rev_old[j].push_back(static_cast<std::uint32_t>(i));
    }
    std::size_t updates = 0;
    constexpr std::size_t kBatch = 2048;
    for (std::size_t lo = 0; lo < n; lo += kBatch) {
      const std::size_t hi = std::min(n, lo + kBatch);
      std::vector<std::vector<Pair>> pairs(hi - lo);
      parallel_for(hi - lo, options.threads, [&](std::size_t b0, std::size_t b1, std::size_t) {
        std::vector<std::uint32_t> nf, no;
        for (std::size_t off = b0; off < b1; ++off) {
          const std::size_t v = lo + off;
          nf = fresh_lists[v];
          nf.insert(nf.end(), rev_fresh[v].begin(), rev_fresh[v].end());
          std::sort(nf.begin(), nf.end());
          nf.erase(std::unique(nf.begin(), nf.end()), nf.end());
          no = old_lists[v];
          no.insert(no.end(), rev_old[v].begin(), rev_old[v].end());
          std::sort(no.begin(), no.end());
          no.erase(std::unique(no.begin(), no.end()), no.end());
          auto& out = pairs[off];
          for (std::size_t x = 0; x < nf.size(); ++x) {
            for (std::size_t y = x + 1; y < nf.size(); ++y)
              out.push_back({nf[x], nf[y], distance(matrix.row(nf[x]), matrix.row(nf[y]), metric)});
            for (auto u : no)
              if (u != nf[x]) out.push_back({nf[x], u, distance(matrix.row(nf[x]), matrix.row(u), metric)});
          }
        }
      });
      for (const auto& list : pairs) {
        for (const auto& p : list) {
          updates += heaps[p.a].push({p.dist, p.b}, cap);
          updates += heaps[p.b].push({p.dist, p.a}, cap);
        }
      }
    }
    if (static_cast<double>(updates) < options.delta * static_cast<double>(n * k)) break;
  }

  KnnGraph g{n, k, std::vector<std::uint32_t>(n * k), std::vector<double>(n * k)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t e = 0; e < k; ++e) {
      g.indices[i * k + e] = heaps[i].items[e].id;
      g.distances[i * k + e] = heaps[i].items[e].dist;
    }
  }
  return g;
}

KnnGraph build_knn(const EmbeddingMatrix& matrix, std::size_t k, Metric metric,
                   const KnnOptions& options) {
  if (matrix.rows <= options.exact_threshold) return exact_knn(matrix, k, metric, options.threads);
  return approximate_knn(matrix, k, metric, options);
}

KnnGraph knn_from_dissimilarity(std::span<const float> dissimilarity, std::size_t n, std::size_t k) {
  if (dissimilarity.size() != n * n)
    throw Error(ErrorCode::ShapeMismatch, "dissimilarity must be n x n",
                {static_cast<std::int64_t>(dissimilarity.size()), static_cast<std::int64_t>(n * n)});
  if (k == 0) throw Error(ErrorCode::KTooSmall, "k must be >= 1");
  if (k >= n)
    throw Error(ErrorCode::KTooLarge,
                "k = " + std::to_string(k) + " requires more than " + std::to_string(n) + " rows");
  KnnGraph g{n, k, std::vector<std::uint32_t>(n * k), std::vector<double>(n * k)};
  std::vector<Candidate> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row.push_back({static_cast<double>(dissimilarity[i * n + j]), static_cast<std::uint32_t>(j)});
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), row.end());
    for (std::size_t e = 0; e < k; ++e) {
      g.indices[i * k + e] = row[e].id;
      g.distances[i * k + e] = row[e].dist;
    }
  }
  return g;
}

SmoothKnnResult calibrate_smooth_knn(std::span<const double> distances, const SmoothKnnOptions& options) {
  const std::size_t k = distances.size();
  if (k < 2) throw Error(ErrorCode::KTooSmall, "smooth kNN calibration needs k >= 2");
  const double target = std::log2(static_cast<double>(k));
  SmoothKnnResult result;
  result.rho = distances[0];

  const auto residual = [&](double sigma) {
    double s = 0.0;
    for (double d : distances) s += std::exp(-std::max(0.0, d - result.rho) / sigma);
    return s - target;
  };

  // The sum increases monotonically with sigma.
  double lo = options.min_sigma;
  double hi = options.max_sigma;
  const double r_lo = residual(lo);
  if (r_lo >= -options.tol) {
    result.sigma = lo;
    result.degenerate = r_lo > options.tol;
    return result;
  }
  const double r_hi = residual(hi);
  if (r_hi <= options.tol) {
    result.sigma = hi;
    result.degenerate = r_hi < -options.tol;
    return result;
  }
  double best = lo;
  double best_abs = std::abs(r_lo);
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double r = residual(mid);
    if (std::abs(r) < best_abs) {
      best = mid;
      best_abs = std::abs(r);
    }
    if (std::abs(r) <= options.tol) break;
    (r < 0.0 ? lo : hi) = mid;
  }
  result.sigma = best;
  result.degenerate = best_abs > options.tol;
  return result;
}

SmoothKnnParams calibrate_all(const KnnGraph& knn, const SmoothKnnOptions& options, std::size_t threads) {
  SmoothKnnParams p;
  p.rho.resize(knn.n);
  p.sigma.resize(knn.n);
  p.degenerate.resize(knn.n);
  parallel_for(knn.n, threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      const auto r = calibrate_smooth_knn(knn.distances_of(i), options);
      p.rho[i] = r.rho;
      p.sigma[i] = r.sigma;
      p.degenerate[i] = r.degenerate ? 1 : 0;
    }
  });
  return p;
}

double fuzzy_weight(double distance, double rho, double sigma) {
  // Floored at the smallest normal double so every kNN edge keeps a positive weight.
  const double w = std::exp(-std::max(0.0, distance - rho) / sigma);
  return std::max(w, std::numeric_limits<double>::min());
}

SymmetricGraph symmetrize(const FuzzyGraph& fuzzy) {
  const CsrMatrix p = fuzzy.weights.sorted_by_column();
  const CsrMatrix pt = p.transpose();  // rows come out column-sorted
  SymmetricGraph s;
  auto& w = s.weights;
  w.rows = w.cols = p.rows;
  w.row_ptr.assign(1, 0);
  for (std::size_t i = 0; i < p.rows; ++i) {
    const auto ac = p.row_cols(i);
    const auto av = p.row_values(i);
    const auto bc = pt.row_cols(i);
    const auto bv = pt.row_values(i);
    std::size_t x = 0, y = 0;
    while (x < ac.size() || y < bc.size()) {
      std::uint32_t col;
      double a = 0.0, b = 0.0;
      if (y == bc.size() || (x < ac.size() && ac[x] < bc[y])) {
        col = ac[x];
        a = av[x++];
      } else if (x == ac.size() || bc[y] < ac[x]) {
        col = bc[y];
        b = bv[y++];
      } else {
        col = ac[x];
        a = av[x++];
        b = bv[y++];
      }
      if (col == i) continue;
      w.col_idx.push_back(col);
      w.values.push_back(a + b - a * b);
    }
    w.row_ptr.push_back(w.col_idx.size());
  }
  return s;
}

std::pair<FuzzyGraph, SymmetricGraph> fuzzy_graph(const KnnGraph& knn, const SmoothKnnParams& params) {
  if (params.rho.size() != knn.n || params.sigma.size() != knn.n)
    throw Error(ErrorCode::ShapeMismatch, "smooth kNN parameters not aligned with kNN graph",
                {static_cast<std::int64_t>(params.rho.size()), static_cast<std::int64_t>(knn.n)});
  FuzzyGraph f;
  auto& w = f.weights;
  w.rows = w.cols = knn.n;
  w.row_ptr.resize(knn.n + 1);
  w.col_idx = knn.indices;
  w.values.resize(knn.n * knn.k);
  for (std::size_t i = 0; i < knn.n; ++i) {
    w.row_ptr[i + 1] = (i + 1) * knn.k;
    const auto d = knn.distances_of(i);
    for (std::size_t e = 0; e < knn.k; ++e)
      w.values[i * knn.k + e] = fuzzy_weight(d[e], params.rho[i], params.sigma[i]);
  }
  SymmetricGraph s = symmetrize(f);
  return {std::move(f), std::move(s)};
}

TransitionMatrix::TransitionMatrix(CsrMatrix probabilities) : probs_(std::move(probabilities)) {
  cumulative_.resize(probs_.nnz());
  for (std::size_t i = 0; i < probs_.rows; ++i) {
    double acc = 0.0;
    for (std::size_t e = probs_.row_ptr[i]; e < probs_.row_ptr[i + 1]; ++e) {
      acc += probs_.values[e];
      cumulative_[e] = acc;
    }
  }
}

std::uint32_t TransitionMatrix::sample(std::size_t i, double u) const {
  const std::size_t b = probs_.row_ptr[i];
  const std::size_t e = probs_.row_ptr[i + 1];
  if (b == e) return static_cast<std::uint32_t>(i);
  const double x = u * cumulative_[e - 1];
  const auto it = std::upper_bound(cumulative_.begin() + static_cast<std::ptrdiff_t>(b),
                                   cumulative_.begin() + static_cast<std::ptrdiff_t>(e), x);
  const std::size_t slot = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), e - 1);
  return probs_.col_idx[slot];
}

TransitionMatrix transition_matrix(const FuzzyGraph& fuzzy) {
  CsrMatrix t = fuzzy.weights;
  for (std::size_t i = 0; i < t.rows; ++i) {
    double sum = 0.0;
    for (std::size_t e = t.row_ptr[i]; e < t.row_ptr[i + 1]; ++e) sum += t.values[e];
    if (!(sum > 0.0))
      throw Error(ErrorCode::EmptyRow, "row " + std::to_string(i) + " has no positive weight",
                  {static_cast<std::int64_t>(i)});
    for (std::size_t e = t.row_ptr[i]; e < t.row_ptr[i + 1]; ++e) t.values[e] /= sum;
  }
  return TransitionMatrix(std::move(t));
}

LevelGraphs build_level_graphs(KnnGraph knn, const SmoothKnnOptions& options, std::size_t threads) {
  LevelGraphs g;
  g.params = calibrate_all(knn, options, threads);
  auto [fuzzy, symmetric] = fuzzy_graph(knn, g.params);
  g.transition = transition_matrix(fuzzy);
  g.fuzzy = std::move(fuzzy);
  g.symmetric = std::move(symmetric);
  g.knn = std::move(knn);
  return g;
}

}  // namespace cx
