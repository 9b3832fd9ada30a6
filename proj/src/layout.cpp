#include "cx/layout.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <string>

#include "cx/error.hpp"
#include "cx/parallel.hpp"
#include "cx/random.hpp"

namespace cx {
namespace {

constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kOptimizeStream = 12;
constexpr std::uint64_t kObjectiveStream = 13;
constexpr std::uint64_t kJitterStream = 14;
constexpr std::size_t kDenseEigenLimit = 1500;
constexpr double kBox = 10.0;

using Vec2 = std::array<double, 2>;

Vec2 attract_gradient(const Point2& cur, const Point2& other, const CurveParams& c) {
  const double dx = static_cast<double>(cur[0]) - other[0];
  const double dy = static_cast<double>(cur[1]) - other[1];
  const double d2 = dx * dx + dy * dy;
  if (!(d2 > 0.0)) return {0.0, 0.0};
  const double coef = (-2.0 * c.a * c.b * std::pow(d2, c.b - 1.0)) / (c.a * std::pow(d2, c.b) + 1.0);
  return {detail::clip_gradient(coef * dx), detail::clip_gradient(coef * dy)};
}

Vec2 repel_gradient(const Point2& cur, const Point2& other, const CurveParams& c) {
  const double dx = static_cast<double>(cur[0]) - other[0];
  const double dy = static_cast<double>(cur[1]) - other[1];
  const double d2 = dx * dx + dy * dy;
  double coef = 0.0;
  if (d2 > 0.0) coef = 2.0 * c.b / ((0.001 + d2) * (c.a * std::pow(d2, c.b) + 1.0));
  if (coef > 0.0) return {detail::clip_gradient(coef * dx), detail::clip_gradient(coef * dy)};
  return {4.0, 4.0};
}

// Places each component in its own grid cell. `local` holds positions already
// centered and scaled to [-1, 1] per component, in component-member order.
Positions place_components(std::size_t n, const std::vector<std::vector<std::uint32_t>>& members,
                           const std::vector<std::vector<Vec2>>& local) {
  Positions out(n, Point2{0.0f, 0.0f});
  const std::size_t count = members.size();
  const auto grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  const double side = 2.0 * kBox / static_cast<double>(grid);
  const double half = count == 1 ? kBox : 0.45 * side;
  for (std::size_t c = 0; c < count; ++c) {
    const double cx = -kBox + side * (static_cast<double>(c % grid) + 0.5);
    const double cy = -kBox + side * (static_cast<double>(c / grid) + 0.5);
    for (std::size_t m = 0; m < members[c].size(); ++m) {
      out[members[c][m]] = {static_cast<float>(cx + half * local[c][m][0]),
                            static_cast<float>(cy + half * local[c][m][1])};
    }
  }
  return out;
}

// Centers and uniformly scales to max |coordinate| = 1.
void normalize_unit(std::vector<Vec2>& pts) {
  if (pts.empty()) return;
  Vec2 mean{0.0, 0.0};
  for (const auto& p : pts) {
    mean[0] += p[0];
    mean[1] += p[1];
  }
  mean[0] /= static_cast<double>(pts.size());
  mean[1] /= static_cast<double>(pts.size());
  double peak = 0.0;
  for (auto& p : pts) {
    p[0] -= mean[0];
    p[1] -= mean[1];
    peak = std::max({peak, std::abs(p[0]), std::abs(p[1])});
  }
  if (peak > 0.0)
    for (auto& p : pts) {
      p[0] /= peak;
      p[1] /= peak;
    }
}

// Two leading non-trivial eigenvectors of the normalized adjacency of one
// component, mapped back to generalized Laplacian eigenvectors D^-1/2 u.
bool spectral_component(const SymmetricGraph& graph, const std::vector<std::uint32_t>& nodes,
                        const std::vector<std::uint32_t>& local_of, std::uint64_t seed,
                        std::vector<Vec2>& out) {
  const std::size_t m = nodes.size();
  const auto& w = graph.weights;
  Eigen::VectorXd deg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  for (std::size_t a = 0; a < m; ++a) {
    for (double v : w.row_values(nodes[a])) deg[static_cast<Eigen::Index>(a)] += v;
  }
  if ((deg.array() <= 0.0).any()) return false;
  const Eigen::VectorXd inv_sqrt = deg.array().rsqrt();

  Eigen::MatrixXd vectors(static_cast<Eigen::Index>(m), 2);
  if (m <= kDenseEigenLimit) {
    Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (std::size_t a = 0; a < m; ++a) {
      const auto cols = w.row_cols(nodes[a]);
      const auto vals = w.row_values(nodes[a]);
      for (std::size_t e = 0; e < cols.size(); ++e) {
        const auto b = local_of[cols[e]];
        adj(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            vals[e] * inv_sqrt[static_cast<Eigen::Index>(a)] * inv_sqrt[static_cast<Eigen::Index>(b)];
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(adj);
    if (solver.info() != Eigen::Success) return false;
    const auto idx = static_cast<Eigen::Index>(m);
    vectors.col(0) = solver.eigenvectors().col(idx - 2);
    vectors.col(1) = solver.eigenvectors().col(idx - 3);
  } else {
    // Subspace iteration on (I + N) / 2, deflating the trivial eigenvector sqrt(deg).
    const Eigen::VectorXd trivial = deg.array().sqrt().matrix().normalized();
    constexpr Eigen::Index kBlock = 4;
    Rng rng(seed);
    Eigen::MatrixXd q(static_cast<Eigen::Index>(m), kBlock);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
    const auto apply = [&](const Eigen::MatrixXd& x) {
      Eigen::MatrixXd y = 0.5 * x;
      for (std::size_t a = 0; a < m; ++a) {
        const auto cols = w.row_cols(nodes[a]);
        const auto vals = w.row_values(nodes[a]);
        for (std::size_t e = 0; e < cols.size(); ++e) {
          const auto b = static_cast<Eigen::Index>(local_of[cols[e]]);
          const double nv = 0.5 * vals[e] * inv_sqrt[static_cast<Eigen::Index>(a)] * inv_sqrt[b];
          y.row(static_cast<Eigen::Index>(a)) += nv * x.row(b);
        }
      }
      return y;
    };
    for (int it = 0; it < 300; ++it) {
      q -= trivial * (trivial.transpose() * q);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
      q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m), kBlock);
      q = apply(q);
    }
    q -= trivial * (trivial.transpose() * q);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
    q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m), kBlock);
    const Eigen::MatrixXd small = q.transpose() * apply(q);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz(0.5 * (small + small.transpose()));
    if (ritz.info() != Eigen::Success) return false;
    const Eigen::MatrixXd rv = q * ritz.eigenvectors();
    vectors.col(0) = rv.col(kBlock - 1);
    vectors.col(1) = rv.col(kBlock - 2);
  }
  out.resize(m);
  for (std::size_t a = 0; a < m; ++a) {
    const auto i = static_cast<Eigen::Index>(a);
    out[a] = {vectors(i, 0) * inv_sqrt[i], vectors(i, 1) * inv_sqrt[i]};
    if (!std::isfinite(out[a][0]) || !std::isfinite(out[a][1])) return false;
  }
  normalize_unit(out);
  return true;
}

bool has_edge(const CsrMatrix& w, std::uint32_t i, std::uint32_t j) {
  const auto cols = w.row_cols(i);
  return std::binary_search(cols.begin(), cols.end(), j);
}

void check_finite(const Positions& p, std::size_t epoch) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i][0]) || !std::isfinite(p[i][1]))
      throw Error(ErrorCode::NonFinitePosition,
                  "node " + std::to_string(i) + " left the finite range at epoch " + std::to_string(epoch),
                  {static_cast<std::int64_t>(i), static_cast<std::int64_t>(epoch)});
  }
}

SymmetricGraph restrict_graph(const SymmetricGraph& graph, std::span<const std::uint32_t> members) {
  std::unordered_map<std::uint32_t, std::uint32_t> local;
  local.reserve(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) local.emplace(members[i], static_cast<std::uint32_t>(i));
  SymmetricGraph sub;
  auto& w = sub.weights;
  w.rows = w.cols = members.size();
  w.row_ptr.assign(1, 0);
  for (auto node : members) {
    std::vector<std::pair<std::uint32_t, double>> row;
    const auto cols = graph.weights.row_cols(node);
    const auto vals = graph.weights.row_values(node);
    for (std::size_t e = 0; e < cols.size(); ++e) {
      const auto it = local.find(cols[e]);
      if (it != local.end()) row.emplace_back(it->second, vals[e]);
    }
    std::sort(row.begin(), row.end());
    for (const auto& [c, v] : row) {
      w.col_idx.push_back(c);
      w.values.push_back(v);
    }
    w.row_ptr.push_back(w.col_idx.size());
  }
  return sub;
}

}  // namespace

InitMethod parse_init_method(std::string_view name) {
  if (name == "spectral") return InitMethod::Spectral;
  if (name == "random") return InitMethod::Random;
  throw Error(ErrorCode::InvalidArgument, "unknown init method '" + std::string(name) + "'");
}

std::string_view to_string(InitMethod method) {
  return method == InitMethod::Spectral ? "spectral" : "random";
}

std::size_t resolve_epochs(const LayoutParams& params, std::size_t n_points) {
  if (params.epochs > 0) return params.epochs;
  return n_points <= 10000 ? 500 : 200;
}

namespace detail {

double clip_gradient(double g) { return std::clamp(g, -4.0, 4.0); }

void attract(Point2& head, Point2& tail, const CurveParams& curve, double lr, double head_scale,
             double tail_scale) {
  const Vec2 g = attract_gradient(head, tail, curve);
  for (int d = 0; d < 2; ++d) {
    head[d] = static_cast<float>(head[d] + g[d] * lr * head_scale);
    tail[d] = static_cast<float>(tail[d] - g[d] * lr * tail_scale);
  }
}

void repel(Point2& head, const Point2& other, const CurveParams& curve, double lr, double head_scale) {
  const Vec2 g = repel_gradient(head, other, curve);
  for (int d = 0; d < 2; ++d) head[d] = static_cast<float>(head[d] + g[d] * lr * head_scale);
}

}  // namespace detail

CurveParams fit_curve_params(double min_dist, double spread) {
  if (!(min_dist > 0.0) || !(min_dist < spread))
    throw Error(ErrorCode::InvalidArgument, "curve fit requires 0 < min_dist < spread");
  constexpr int kSamples = 300;
  std::vector<double> ts(kSamples), ys(kSamples);
  for (int i = 0; i < kSamples; ++i) {
    const double t = 3.0 * spread * i / (kSamples - 1);
    ts[i] = t;
    ys[i] = t < min_dist ? 1.0 : std::exp(-(t - min_dist) / spread);
  }
  const auto sse = [&](double a, double b) {
    double s = 0.0;
    for (int i = 0; i < kSamples; ++i) {
      const double r = 1.0 / (1.0 + a * std::pow(ts[i], 2.0 * b)) - ys[i];
      s += r * r;
    }
    return s;
  };

  // Levenberg-Marquardt on (a, b).
  double a = 1.0, b = 1.0, lambda = 1e-3;
  double cost = sse(a, b);
  for (int it = 0; it < 500; ++it) {
    Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
    Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
    for (int i = 0; i < kSamples; ++i) {
      const double t = ts[i];
      const double x = std::pow(t, 2.0 * b);
      const double den = 1.0 + a * x;
      const double r = 1.0 / den - ys[i];
      const double da = -x / (den * den);
      const double db = t > 0.0 ? -a * x * 2.0 * std::log(t) / (den * den) : 0.0;
      const Eigen::Vector2d j(da, db);
      jtj += j * j.transpose();
      jtr += j * r;
    }
    bool improved = false;
    while (lambda < 1e12) {
      Eigen::Matrix2d damped = jtj;
      damped.diagonal() *= (1.0 + lambda);
      const Eigen::Vector2d step = damped.ldlt().solve(-jtr);
      const double na = a + step[0], nb = b + step[1];
      if (na > 0.0 && nb > 0.0 && std::isfinite(na) && std::isfinite(nb)) {
        const double nc = sse(na, nb);
        if (nc < cost) {
          const double rel = (cost - nc) / std::max(cost, 1e-300);
          a = na;
          b = nb;
          cost = nc;
          lambda = std::max(lambda * 0.3, 1e-12);
          improved = true;
          if (rel < 1e-14) it = 500;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  if (!std::isfinite(a) || !std::isfinite(b) || a <= 0.0 || b <= 0.0)
    throw Error(ErrorCode::FitDiverged, "curve fit left the positive domain");
  return CurveParams{a, b, min_dist, spread};
}

std::vector<std::uint32_t> connected_components(const SymmetricGraph& graph, std::size_t& count) {
  const std::size_t n = graph.size();
  std::vector<std::uint32_t> label(n, UINT32_MAX);
  count = 0;
  std::vector<std::uint32_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (label[s] != UINT32_MAX) continue;
    const auto id = static_cast<std::uint32_t>(count++);
    label[s] = id;
    stack.assign(1, static_cast<std::uint32_t>(s));
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      for (auto u : graph.weights.row_cols(v)) {
        if (label[u] == UINT32_MAX) {
          label[u] = id;
          stack.push_back(u);
        }
      }
    }
  }
  return label;
}

Positions initialize_positions(const SymmetricGraph& graph, InitMethod method, std::uint64_t seed) {
  const std::size_t n = graph.size();
  if (n == 0) return {};
  std::size_t count = 0;
  const auto label = connected_components(graph, count);
  std::vector<std::vector<std::uint32_t>> members(count);
  std::vector<std::uint32_t> local_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    local_of[i] = static_cast<std::uint32_t>(members[label[i]].size());
    members[label[i]].push_back(static_cast<std::uint32_t>(i));
  }
  // Largest components take the first cells.
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return members[x].size() > members[y].size(); });
  std::vector<std::vector<std::uint32_t>> sorted_members;
  sorted_members.reserve(count);
  for (auto c : order) sorted_members.push_back(std::move(members[c]));

  Rng rng(derive_seed(seed, kInitStream));
  std::vector<std::vector<Vec2>> local(count);
  bool warned = false;
  for (std::size_t c = 0; c < count; ++c) {
    const auto& nodes = sorted_members[c];
    auto& pts = local[c];
    const auto random_fill = [&] {
      pts.resize(nodes.size());
      for (auto& p : pts) p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    };
    if (nodes.size() == 1) {
      pts.assign(1, Vec2{0.0, 0.0});
    } else if (nodes.size() == 2) {
      pts = {Vec2{-1.0, 0.0}, Vec2{1.0, 0.0}};
    } else if (method == InitMethod::Random) {
      random_fill();
    } else if (!spectral_component(graph, nodes, local_of, derive_seed(seed, kInitStream, c + 1), pts)) {
      if (!warned) {
        std::cerr << "warning: spectral initialization failed, using random positions\n";
        warned = true;
      }
      random_fill();
    }
  }
  return place_components(n, sorted_members, local);
}

ObjectiveSample sample_objective_pairs(const SymmetricGraph& graph, std::size_t pairs, std::uint64_t seed) {
  ObjectiveSample s;
  const auto& w = graph.weights;
  const std::size_t n = graph.size();
  Rng rng(derive_seed(seed, kObjectiveStream));
  if (w.nnz() > 0) {
    const std::size_t take = std::min(pairs, w.nnz());
    for (std::size_t t = 0; t < take; ++t) {
      const std::size_t e = take == w.nnz() ? t : rng.below(w.nnz());
      const auto row = static_cast<std::uint32_t>(
          std::upper_bound(w.row_ptr.begin(), w.row_ptr.end(), e) - w.row_ptr.begin() - 1);
      s.edges.push_back({row, w.col_idx[e]});
      s.edge_weights.push_back(w.values[e]);
    }
  }
  if (n >= 2) {
    std::size_t attempts = 0;
    while (s.non_edges.size() < pairs && attempts < 20 * pairs) {
      ++attempts;
      const auto i = static_cast<std::uint32_t>(rng.below(n));
      const auto j = static_cast<std::uint32_t>(rng.below(n));
      if (i == j || has_edge(w, i, j)) continue;
      s.non_edges.push_back({i, j});
    }
  }
  return s;
}

double sampled_cross_entropy(const ObjectiveSample& sample, const Positions& positions, const CurveParams& curve) {
  const auto q = [&](std::uint32_t i, std::uint32_t j) {
    const double dx = static_cast<double>(positions[i][0]) - positions[j][0];
    const double dy = static_cast<double>(positions[i][1]) - positions[j][1];
    const double d2 = dx * dx + dy * dy;
    return std::clamp(1.0 / (1.0 + curve.a * std::pow(d2, curve.b)), 1e-12, 1.0 - 1e-12);
  };
  double ce = 0.0;
  for (std::size_t e = 0; e < sample.edges.size(); ++e)
    ce -= sample.edge_weights[e] * std::log(q(sample.edges[e][0], sample.edges[e][1]));
  for (const auto& p : sample.non_edges) ce -= std::log(1.0 - q(p[0], p[1]));
  return ce;
}

OptimizeParams optimize_params_for(const LayoutParams& layout, std::size_t n_points) {
  OptimizeParams p;
  p.epochs = resolve_epochs(layout, n_points);
  p.initial_lr = layout.initial_lr;
  p.neg_samples = layout.neg_samples;
  p.curve = fit_curve_params(layout.min_dist, layout.spread);
  p.deterministic = layout.deterministic;
  p.threads = layout.threads;
  return p;
}

LevelEmbedding optimize_positions(const SymmetricGraph& graph, Positions positions,
                                  const OptimizeParams& params, std::uint64_t seed) {
  if (params.epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
  const std::size_t n = graph.size();
  if (positions.size() != n)
    throw Error(ErrorCode::ShapeMismatch, "positions do not match graph size",
                {static_cast<std::int64_t>(positions.size()), static_cast<std::int64_t>(n)});
  if (!params.lr_scale.empty() && params.lr_scale.size() != n)
    throw Error(ErrorCode::ShapeMismatch, "lr_scale does not match graph size");
  const auto& w = graph.weights;
  const auto scale = [&](std::size_t i) -> double {
    return params.lr_scale.empty() ? 1.0 : params.lr_scale[i];
  };

  // Edge schedule: an edge of weight w fires every max_w / w epochs; edges
  // that would fire less than once over the run are dropped.
  struct Edge {
    std::uint32_t head, tail;
    double every, next, neg_every, next_neg;
  };
  std::vector<Edge> edges;
  const double max_w = w.nnz() ? *std::max_element(w.values.begin(), w.values.end()) : 0.0;
  std::vector<std::uint8_t> connected(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cols = w.row_cols(i);
    const auto vals = w.row_values(i);
    for (std::size_t e = 0; e < cols.size(); ++e) {
      if (vals[e] < max_w / static_cast<double>(params.epochs)) continue;
      const double every = max_w / vals[e];
      const double neg_every = params.neg_samples ? every / static_cast<double>(params.neg_samples) : 0.0;
      edges.push_back({static_cast<std::uint32_t>(i), cols[e], every, every, neg_every, neg_every});
      connected[i] = connected[cols[e]] = 1;
    }
  }
  std::vector<std::uint32_t> isolated;
  for (std::size_t i = 0; i < n; ++i)
    if (!connected[i]) isolated.push_back(static_cast<std::uint32_t>(i));

  LevelEmbedding out;
  out.epoch_count = params.epochs;
  const ObjectiveSample sample = sample_objective_pairs(graph, params.objective_pairs, seed);
  out.objective_trace.push_back(sampled_cross_entropy(sample, positions, params.curve));
  const std::size_t trace_every = std::max<std::size_t>(1, params.epochs / 10);

  Rng rng(derive_seed(seed, kOptimizeStream));
  const std::size_t workers = params.deterministic ? 1 : resolve_threads(params.threads);

  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    const double lr = params.initial_lr * (1.0 - static_cast<double>(epoch) / static_cast<double>(params.epochs));
    const double now = static_cast<double>(epoch + 1);
    if (workers <= 1) {
      for (auto& e : edges) {
        if (e.next > now) continue;
        detail::attract(positions[e.head], positions[e.tail], params.curve, lr, scale(e.head), scale(e.tail));
        e.next += e.every;
        if (params.neg_samples && n > 1) {
          const auto draws = static_cast<std::size_t>((now - e.next_neg) / e.neg_every);
          for (std::size_t s = 0; s < draws; ++s) {
            const auto other = rng.below(n);
            if (other == e.head) continue;
            detail::repel(positions[e.head], positions[other], params.curve, lr, scale(e.head));
          }
          e.next_neg += static_cast<double>(draws) * e.neg_every;
        }
      }
    } else {
      // Concurrent updates through relaxed atomics; lost updates are tolerated.
      parallel_for(edges.size(), workers, [&](std::size_t b, std::size_t end, std::size_t worker) {
        Rng local(derive_seed(seed, kOptimizeStream, epoch + 1, worker + 1));
        const auto load = [&](std::size_t i) {
          return Point2{std::atomic_ref<float>(positions[i][0]).load(std::memory_order_relaxed),
                        std::atomic_ref<float>(positions[i][1]).load(std::memory_order_relaxed)};
        };
        const auto store = [&](std::size_t i, const Point2& p) {
          std::atomic_ref<float>(positions[i][0]).store(p[0], std::memory_order_relaxed);
          std::atomic_ref<float>(positions[i][1]).store(p[1], std::memory_order_relaxed);
        };
        for (std::size_t x = b; x < end; ++x) {
          auto& e = edges[x];
          if (e.next > now) continue;
          Point2 head = load(e.head), tail = load(e.tail);
          detail::attract(head, tail, params.curve, lr, scale(e.head), scale(e.tail));
          store(e.tail, tail);
          e.next += e.every;
          if (params.neg_samples && n > 1) {
            const auto draws = static_cast<std::size_t>((now - e.next_neg) / e.neg_every);
            for (std::size_t s = 0; s < draws; ++s) {
              const auto other = local.below(n);
              if (other == e.head) continue;
              detail::repel(head, load(other), params.curve, lr, scale(e.head));
            }
            e.next_neg += static_cast<double>(draws) * e.neg_every;
          }
          store(e.head, head);
        }
      });
    }
    // Nodes without surviving edges only feel repulsion.
    if (params.neg_samples && n > 1) {
      for (auto i : isolated) {
        for (std::size_t s = 0; s < params.neg_samples; ++s) {
          const auto other = rng.below(n);
          if (other == i) continue;
          detail::repel(positions[i], positions[other], params.curve, lr, scale(i));
        }
      }
    }
    check_finite(positions, epoch);
    if ((epoch + 1) % trace_every == 0 || epoch + 1 == params.epochs)
      out.objective_trace.push_back(sampled_cross_entropy(sample, positions, params.curve));
  }
  out.positions = std::move(positions);
  return out;
}

LevelEmbedding embed_level(const Hierarchy& hierarchy, std::size_t level, const LayoutParams& params,
                           std::uint64_t seed) {
  if (level >= hierarchy.depth())
    throw Error(ErrorCode::BadLevel, "level " + std::to_string(level) + " does not exist",
                {static_cast<std::int64_t>(level)});
  const auto& graph = hierarchy.levels[level].graph;
  const std::uint64_t level_seed = derive_seed(seed, kOptimizeStream, level);
  Positions init = initialize_positions(graph, params.init, level_seed);
  LevelEmbedding emb = optimize_positions(graph, std::move(init), optimize_params_for(params, graph.size()), level_seed);
  emb.level = level;
  return emb;
}

std::vector<LevelEmbedding> embed_all_levels(const Hierarchy& hierarchy, const LayoutParams& params,
                                             std::uint64_t seed) {
  std::vector<LevelEmbedding> out;
  out.reserve(hierarchy.depth());
  for (std::size_t l = 0; l < hierarchy.depth(); ++l) out.push_back(embed_level(hierarchy, l, params, seed));
  return out;
}

SubEmbedding drill_down_members(const Hierarchy& hierarchy, std::size_t level,
                                std::span<const std::uint32_t> landmark_ids) {
  if (level < 1 || level >= hierarchy.depth())
    throw Error(ErrorCode::BadLevel, "drill-down needs a level in [1, " + std::to_string(hierarchy.depth() - 1) + "]",
                {static_cast<std::int64_t>(level)});
  if (landmark_ids.empty()) throw Error(ErrorCode::EmptySelection, "no landmarks selected");
  const auto& upper = hierarchy.levels[level];
  const auto& lower = hierarchy.levels[level - 1];
  const auto upper_pos = local_positions(upper);
  std::unordered_map<std::uint32_t, std::uint8_t> selected;
  for (auto id : landmark_ids) {
    if (!upper_pos.contains(id))
      throw Error(ErrorCode::UnknownLandmark, "node " + std::to_string(id) + " is not on level " + std::to_string(level),
                  {static_cast<std::int64_t>(id)});
    selected[id] = 1;
  }
  SubEmbedding sub;
  sub.parent_level = level;
  sub.selected_landmarks.assign(landmark_ids.begin(), landmark_ids.end());
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (selected.contains(lower.influence[i])) {
      sub.member_nodes.push_back(lower.nodes[i]);
      sub.member_landmarks.push_back(lower.influence[i]);
    }
  }
  return sub;
}

SubEmbedding drill_down(const Hierarchy& hierarchy, std::span<const LevelEmbedding> embeddings,
                        std::size_t level, std::span<const std::uint32_t> landmark_ids,
                        const LayoutParams& params, std::uint64_t seed) {
  SubEmbedding sub = drill_down_members(hierarchy, level, landmark_ids);
  if (embeddings.size() <= level) throw Error(ErrorCode::BadLevel, "no layout for level " + std::to_string(level));
  const auto upper_pos = local_positions(hierarchy.levels[level]);
  const auto& anchor_layout = embeddings[level].positions;
  const auto& lower = hierarchy.levels[level - 1];
  const auto lower_pos = local_positions(lower);

  std::vector<std::uint32_t> local_members;
  local_members.reserve(sub.member_nodes.size());
  for (auto node : sub.member_nodes) local_members.push_back(lower_pos.at(node));
  const SymmetricGraph graph = restrict_graph(lower.graph, local_members);

  Rng rng(derive_seed(seed, kJitterStream, level));
  Positions init(sub.member_nodes.size());
  std::vector<float> lr_scale(sub.member_nodes.size(), 1.0f);
  for (std::size_t m = 0; m < sub.member_nodes.size(); ++m) {
    const Point2 anchor = anchor_layout[upper_pos.at(sub.member_landmarks[m])];
    if (sub.member_nodes[m] == sub.member_landmarks[m]) {
      init[m] = anchor;
      lr_scale[m] = kAnchorLrScale;
      continue;
    }
    const double angle = 2.0 * std::numbers::pi * rng.uniform();
    const double radius = kDrillJitterRadius * std::sqrt(rng.uniform());
    init[m] = {static_cast<float>(anchor[0] + radius * std::cos(angle)),
               static_cast<float>(anchor[1] + radius * std::sin(angle))};
  }
  OptimizeParams opt = optimize_params_for(params, init.size());
  opt.lr_scale = std::move(lr_scale);
  sub.positions = optimize_positions(graph, std::move(init), opt, derive_seed(seed, kJitterStream, level, 1)).positions;
  return sub;
}

SubEmbedding reveal_stored(const Hierarchy& hierarchy, std::span<const LevelEmbedding> embeddings,
                           std::size_t level, std::span<const std::uint32_t> landmark_ids) {
  SubEmbedding sub = drill_down_members(hierarchy, level, landmark_ids);
  if (embeddings.size() < level) throw Error(ErrorCode::BadLevel, "no layout for level " + std::to_string(level - 1));
  const auto lower_pos = local_positions(hierarchy.levels[level - 1]);
  const auto& layout = embeddings[level - 1].positions;
  sub.positions.reserve(sub.member_nodes.size());
  for (auto node : sub.member_nodes) sub.positions.push_back(layout[lower_pos.at(node)]);
  return sub;
}

}  // namespace cx
