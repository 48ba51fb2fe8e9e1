#pragma once

// Hadamard-derived Linear Binding: binding is the elementwise product,
// unbinding the elementwise quotient, bundling the elementwise sum.
// Vectors are drawn from the MiND mixture: each entry comes from
// N(+mu, 1/d) or N(-mu, 1/d) with equal probability, giving E[v] = 0,
// E[|v|] ~= mu and ||v||_2 ~= sqrt(mu^2 d).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vsamil/error.hpp"

namespace vsamil {

inline constexpr double kDefaultMu = 0.5;
inline constexpr double kUnbindGuard = 1e-12;

struct HyperVector {
  std::vector<double> entries;
  double mu = kDefaultMu;

  std::size_t dim() const noexcept { return entries.size(); }
  friend bool operator==(const HyperVector&, const HyperVector&) = default;
};

/// Superposition of `count` hypervectors.
struct BundleVector {
  std::vector<double> entries;
  double mu = kDefaultMu;
  std::size_t count = 0;

  std::size_t dim() const noexcept { return entries.size(); }
  friend bool operator==(const BundleVector&, const BundleVector&) = default;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: dimensions " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Fills `out` with MiND entries drawn from `rng`.
template <class Rng>
void mind_fill(std::span<double> out, double mu, Rng& rng) {
  const double sigma = std::sqrt(1.0 / static_cast<double>(out.size()));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out) {
    const double centre = coin(rng) > 0.5 ? -mu : mu;
    v = centre + noise(rng);
  }
}

template <class Rng>
HyperVector mind_sample(std::size_t d, double mu, Rng& rng) {
  if (d == 0) throw ValueError("mind_sample: dimension must be >= 1");
  if (!(mu > 0)) throw ValueError("mind_sample: mu must be positive");
  HyperVector v{std::vector<double>(d), mu};
  mind_fill(std::span<double>(v.entries), mu, rng);
  return v;
}

/// Deterministic given `seed`.
inline HyperVector mind_sample(std::size_t d, double mu, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return mind_sample(d, mu, rng);
}

inline HyperVector bind(const HyperVector& a, const HyperVector& b) {
  if (a.dim() != b.dim()) {
    throw ShapeError("bind: dimensions " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
  }
  HyperVector c{std::vector<double>(a.dim()), a.mu};
  for (std::size_t i = 0; i < a.dim(); ++i) c.entries[i] = a.entries[i] * b.entries[i];
  return c;
}

inline HyperVector unbind(const HyperVector& c, const HyperVector& b) {
  if (c.dim() != b.dim()) {
    throw ShapeError("unbind: dimensions " + std::to_string(c.dim()) + " and " + std::to_string(b.dim()));
  }
  HyperVector a{std::vector<double>(c.dim()), c.mu};
  for (std::size_t i = 0; i < c.dim(); ++i) {
    if (std::fabs(b.entries[i]) <= kUnbindGuard) {
      throw ValueError("unbind: key entry " + std::to_string(i) + " is (near) zero");
    }
    a.entries[i] = c.entries[i] / b.entries[i];
  }
  return a;
}

inline BundleVector bundle(std::span<const HyperVector> vectors) {
  if (vectors.empty()) throw ValueError("bundle: empty list");
  BundleVector s{std::vector<double>(vectors.front().dim(), 0.0), vectors.front().mu, vectors.size()};
  for (const auto& v : vectors) {
    if (v.dim() != s.dim()) {
      throw ShapeError("bundle: dimensions " + std::to_string(s.dim()) + " and " + std::to_string(v.dim()));
    }
    for (std::size_t i = 0; i < v.dim(); ++i) s.entries[i] += v.entries[i];
  }
  return s;
}

/// c·s. In expectation mu^2 d when c is one of the bundled vectors, 0 otherwise.
inline double membership_score(const HyperVector& c, const BundleVector& s) { return dot(c.entries, s.entries); }

struct MembershipStats {
  std::vector<double> present;  // c bundled with n-1 other vectors
  std::vector<double> absent;   // n vectors independent of c
  double present_mean = 0.0;
  double absent_mean = 0.0;
  double expected_present = 0.0;  // mu^2 d
  /// Fraction of all samples lying on the wrong side of the midpoint threshold.
  double overlap = 0.0;
};

/// Monte Carlo estimate of membership scores for bundles of `n` MiND vectors.
inline MembershipStats membership_experiment(std::size_t d, double mu, std::size_t n, std::size_t trials,
                                             std::uint64_t seed) {
  if (n == 0 || trials == 0) throw ValueError("membership_experiment: n and trials must be >= 1");
  std::mt19937_64 rng(seed);
  MembershipStats st;
  st.expected_present = mu * mu * static_cast<double>(d);
  std::vector<HyperVector> members;
  for (std::size_t t = 0; t < trials; ++t) {
    const HyperVector c = mind_sample(d, mu, rng);
    members.assign(1, c);
    for (std::size_t j = 1; j < n; ++j) members.push_back(mind_sample(d, mu, rng));
    st.present.push_back(membership_score(c, bundle(members)));
    members.clear();
    for (std::size_t j = 0; j < n; ++j) members.push_back(mind_sample(d, mu, rng));
    st.absent.push_back(membership_score(c, bundle(members)));
  }
  double sp = 0.0, sa = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    sp += st.present[t];
    sa += st.absent[t];
  }
  st.present_mean = sp / static_cast<double>(trials);
  st.absent_mean = sa / static_cast<double>(trials);
  const double threshold = st.expected_present / 2.0;
  std::size_t wrong = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    wrong += st.present[t] <= threshold;
    wrong += st.absent[t] > threshold;
  }
  st.overlap = static_cast<double>(wrong) / static_cast<double>(2 * trials);
  return st;
}

}  // namespace vsamil
