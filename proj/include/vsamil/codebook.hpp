#pragma once

// k-means codebook over encoded instances: Lloyd iterations from k-means++
// seeds, nearest-centroid quantization, and elbow/silhouette tables.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vsamil/data.hpp"
#include "vsamil/error.hpp"
#include "vsamil/json_io.hpp"

namespace vsamil {

struct KMeansConfig {
  std::size_t k = 3;
  std::uint64_t seed = 0;
  std::size_t max_iters = 300;
  double tol = 1e-6;
  std::size_t restarts = 5;
};

struct Codebook {
  std::vector<Instance> centroids;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  /// Inertia after every assignment step of the winning restart.
  std::vector<double> inertia_trace;

  std::size_t k() const noexcept { return centroids.size(); }
  std::size_t dim() const noexcept { return centroids.empty() ? 0 : centroids.front().size(); }

  Json to_json() const {
    return Json{{"k", k()}, {"seed", seed}, {"inertia", inertia}, {"centroids", centroids}};
  }

  static Codebook from_json(const Json& j) {
    Codebook c;
    c.centroids = json_field<std::vector<Instance>>(j, "centroids");
    c.seed = json_field<std::uint64_t>(j, "seed");
    c.inertia = json_field<double>(j, "inertia");
    if (c.centroids.empty() || json_field<std::size_t>(j, "k") != c.k()) throw DataError("codebook: k does not match centroids");
    for (const auto& r : c.centroids) {
      if (r.size() != c.dim() || r.empty()) throw DataError("codebook: ragged centroid matrix");
    }
    return c;
  }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

struct Quantized {
  std::size_t index = 0;
  double distance = 0.0;  // Euclidean
};

/// Nearest centroid; ties go to the lowest index.
inline Quantized nearest(const Codebook& cb, std::span<const double> x) {
  if (cb.k() == 0) throw ValueError("quantize: empty codebook");
  if (x.size() != cb.dim()) {
    throw ShapeError("quantize: vector has " + std::to_string(x.size()) + " entries, codebook " + std::to_string(cb.dim()));
  }
  Quantized q{0, std::numeric_limits<double>::infinity()};
  for (std::size_t c = 0; c < cb.k(); ++c) {
    const double d2 = squared_distance(cb.centroids[c], x);
    if (d2 < q.distance) q = {c, d2};
  }
  q.distance = std::sqrt(q.distance);
  return q;
}

/// The centroid replacing `x`.
inline const Instance& quantize(const Codebook& cb, std::span<const double> x) { return cb.centroids[nearest(cb, x).index]; }

namespace detail {

struct LloydResult {
  std::vector<Instance> centroids;
  double inertia = 0.0;
  std::vector<double> trace;
};

// Assigns points, returns inertia; ties to lowest index.
inline double assign(std::span<const Instance> pts, const std::vector<Instance>& cents, std::vector<std::size_t>& owner,
                     std::vector<double>& dist) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < cents.size(); ++c) {
      const double d2 = squared_distance(cents[c], pts[i]);
      if (d2 < best) {
        best = d2;
        arg = c;
      }
    }
    owner[i] = arg;
    dist[i] = best;
    inertia += best;
  }
  return inertia;
}

inline LloydResult lloyd(std::span<const Instance> pts, std::vector<Instance> cents, std::size_t max_iters, double tol) {
  const std::size_t k = cents.size(), d = pts.front().size();
  std::vector<std::size_t> owner(pts.size());
  std::vector<double> dist(pts.size());
  LloydResult r;
  double inertia = assign(pts, cents, owner, dist);
  r.trace.push_back(inertia);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::vector<Instance> next(k, Instance(d, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ++counts[owner[i]];
      for (std::size_t j = 0; j < d; ++j) next[owner[i]][j] += pts[i][j];
    }
    bool reseeded = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (auto& v : next[c]) v /= static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      next[c] = pts[far];
      dist[far] = 0.0;
      reseeded = true;
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, std::sqrt(squared_distance(next[c], cents[c])));
    cents = std::move(next);
    inertia = assign(pts, cents, owner, dist);
    r.trace.push_back(inertia);
    if (shift < tol && !reseeded) break;
  }
  r.centroids = std::move(cents);
  r.inertia = inertia;
  return r;
}

template <class Rng>
std::vector<Instance> kmeans_plus_plus(std::span<const Instance> pts, std::size_t k, Rng& rng) {
  std::vector<Instance> cents;
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  cents.push_back(pts[pick(rng)]);
  std::vector<double> d2(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) d2[i] = squared_distance(pts[i], cents[0]);
  while (cents.size() < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t chosen = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      chosen = pts.size() - 1;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        acc += d2[i];
        if (acc >= target && d2[i] > 0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    cents.push_back(pts[chosen]);
    for (std::size_t i = 0; i < pts.size(); ++i) d2[i] = std::min(d2[i], squared_distance(pts[i], cents.back()));
  }
  return cents;
}

inline void check_points(std::span<const Instance> pts, const char* op) {
  if (pts.empty()) throw ValueError(std::string(op) + ": no points");
  for (const auto& p : pts) {
    if (p.size() != pts.front().size()) throw ShapeError(std::string(op) + ": ragged points");
  }
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ seeds; best of `restarts` runs by inertia.
inline Codebook kmeans_fit(std::span<const Instance> points, const KMeansConfig& cfg) {
  detail::check_points(points, "kmeans");
  if (cfg.k == 0) throw ValueError("kmeans: k must be >= 1");
  if (points.size() < cfg.k) {
    throw ValueError("kmeans: " + std::to_string(points.size()) + " points cannot form " + std::to_string(cfg.k) + " clusters");
  }
  std::mt19937_64 rng(cfg.seed);
  Codebook best;
  best.seed = cfg.seed;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(1, cfg.restarts); ++r) {
    auto run = detail::lloyd(points, detail::kmeans_plus_plus(points, cfg.k, rng), cfg.max_iters, cfg.tol);
    if (run.inertia < best.inertia) {
      best.centroids = std::move(run.centroids);
      best.inertia = run.inertia;
      best.inertia_trace = std::move(run.trace);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Mean silhouette of a labelling; singleton clusters score 0.
inline double mean_silhouette(std::span<const Instance> pts, std::span<const std::size_t> owner, std::size_t k) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> sizes(k, 0);
  for (auto o : owner) ++sizes[o];
  double total = 0.0;
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[owner[j]] += std::sqrt(squared_distance(pts[i], pts[j]));
    }
    const std::size_t own = owner[i];
    if (sizes[own] <= 1) continue;
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c != own && sizes[c] > 0) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
    }
    if (!std::isfinite(b)) continue;
    const double m = std::max(a, b);
    total += m > 0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

struct ClusterDiagnostic {
  std::size_t k = 0;
  double inertia = 0.0;
  double silhouette = 0.0;
};

/// Elbow (inertia) and silhouette per k in [k_min, k_max]. Each k also tries
/// a warm start from the previous solution plus the worst-served point, so the
/// reported inertia never increases with k.
inline std::vector<ClusterDiagnostic> cluster_diagnostics(std::span<const Instance> points, std::size_t k_min,
                                                          std::size_t k_max, std::uint64_t seed) {
  detail::check_points(points, "cluster_diagnostics");
  if (k_min < 2 || k_max < k_min || k_max + 1 > points.size()) {
    throw ValueError("cluster_diagnostics: k range must lie within [2, #points - 1]");
  }
  std::vector<ClusterDiagnostic> out;
  std::vector<Instance> previous;
  std::vector<std::size_t> owner(points.size());
  std::vector<double> dist(points.size());
  for (std::size_t k = k_min; k <= k_max; ++k) {
    Codebook cb = kmeans_fit(points, KMeansConfig{k, seed + k, 300, 1e-6, 5});
    if (!previous.empty()) {
      detail::assign(points, previous, owner, dist);
      auto init = previous;
      init.push_back(points[static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin())]);
      auto warm = detail::lloyd(points, std::move(init), 300, 1e-6);
      if (warm.inertia < cb.inertia) {
        cb.centroids = std::move(warm.centroids);
        cb.inertia = warm.inertia;
      }
    }
    detail::assign(points, cb.centroids, owner, dist);
    out.push_back({k, cb.inertia, mean_silhouette(points, owner, k)});
    previous = cb.centroids;
  }
  return out;
}

}  // namespace vsamil
