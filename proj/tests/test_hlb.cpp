#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "vsamil/hlb.hpp"

using namespace vsamil;

namespace {

HyperVector hv(std::vector<double> e) { return HyperVector{std::move(e), kDefaultMu}; }

}  // namespace

TEST(Mind, EmpiricalMoments) {
  const HyperVector v = mind_sample(10000, 0.5, std::uint64_t{1});
  double mean = 0, abs_mean = 0;
  for (double x : v.entries) {
    mean += x;
    abs_mean += std::fabs(x);
  }
  mean /= 10000;
  abs_mean /= 10000;
  EXPECT_GT(mean, -0.02);
  EXPECT_LT(mean, 0.02);
  EXPECT_GT(abs_mean, 0.48);
  EXPECT_LT(abs_mean, 0.52);
  EXPECT_NEAR(std::sqrt(dot(v.entries, v.entries)), 50.0, 0.05 * 50.0);
}

TEST(Mind, SeedDeterministic) {
  EXPECT_EQ(mind_sample(256, 0.5, std::uint64_t{9}).entries, mind_sample(256, 0.5, std::uint64_t{9}).entries);
  EXPECT_NE(mind_sample(256, 0.5, std::uint64_t{9}).entries, mind_sample(256, 0.5, std::uint64_t{10}).entries);
}

TEST(Mind, RejectsBadArguments) {
  EXPECT_THROW(mind_sample(0, 0.5, std::uint64_t{1}), ValueError);
  EXPECT_THROW(mind_sample(8, 0.0, std::uint64_t{1}), ValueError);
  EXPECT_THROW(mind_sample(8, -1.0, std::uint64_t{1}), ValueError);
}

TEST(Bind, ElementwiseProductAndQuotient) {
  EXPECT_EQ(bind(hv({1, 2, 3}), hv({2, 2, 2})).entries, (std::vector<double>{2, 4, 6}));
  EXPECT_EQ(unbind(hv({2, 4, 6}), hv({2, 2, 2})).entries, (std::vector<double>{1, 2, 3}));
  EXPECT_THROW(bind(hv({1, 2}), hv({1, 2, 3})), ShapeError);
}

TEST(Bind, UnbindInvertsBind) {
  const HyperVector a = mind_sample(1024, 0.5, std::uint64_t{3});
  const HyperVector b = mind_sample(1024, 0.5, std::uint64_t{4});
  const HyperVector r = unbind(bind(a, b), b);
  double worst = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) worst = std::max(worst, std::fabs(r.entries[i] - a.entries[i]));
  EXPECT_LT(worst, 1e-9);
}

TEST(Bind, UnbindByNearZeroNamesIndex) {
  try {
    unbind(hv({1, 1, 1}), hv({1, 1e-13, 1}));
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("entry 1"), std::string::npos);
  }
}

TEST(Bundle, SumCountAndOrderInvariance) {
  const std::vector<HyperVector> two{hv({1, 0}), hv({0, 1})};
  const BundleVector s = bundle(two);
  EXPECT_EQ(s.entries, (std::vector<double>{1, 1}));
  EXPECT_EQ(s.count, 2u);

  std::vector<HyperVector> vs;
  for (std::uint64_t i = 0; i < 6; ++i) vs.push_back(mind_sample(64, 0.5, i));
  const std::vector<HyperVector> single{vs[0]};
  EXPECT_EQ(bundle(single).entries, vs[0].entries);
  // Integer-valued entries keep the permutation check exact.
  std::vector<HyperVector> ints;
  for (int i = 0; i < 6; ++i) ints.push_back(hv({double(i), double(2 * i - 3), double(i * i)}));
  auto shuffled = ints;
  std::mt19937_64 rng(5);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_EQ(bundle(ints).entries, bundle(shuffled).entries);
  EXPECT_THROW(bundle(std::vector<HyperVector>{}), ValueError);
}

TEST(Membership, ExactArithmetic) {
  const HyperVector c = hv(std::vector<double>(16, 0.5));
  const std::vector<HyperVector> one{c};
  EXPECT_DOUBLE_EQ(membership_score(c, bundle(one)), 4.0);
}

TEST(Membership, LinearInBundle) {
  const HyperVector c = hv({1, -2, 3});
  const BundleVector s1{{1, 2, 3}, 0.5, 1}, s2{{-4, 0, 2}, 0.5, 1}, s12{{-3, 2, 5}, 0.5, 2};
  EXPECT_EQ(membership_score(c, s12), membership_score(c, s1) + membership_score(c, s2));
}

TEST(Membership, LargeBundleExpectations) {
  // d = 4096, 1000 bundled vectors, 100 trials; expected present score mu^2 d = 1024.
  // A single score has standard deviation near sqrt(999 d) mu^2 = 506, so the
  // 100-trial mean is resolved to about 50: the bands are 4 standard errors
  // estimated from the sample, and the standard error must match that theory.
  std::mt19937_64 rng(21);
  const std::size_t d = 4096;
  constexpr int kTrials = 100;
  std::vector<double> present, absent;
  for (int t = 0; t < kTrials; ++t) {
    const HyperVector c = mind_sample(d, 0.5, rng);
    std::vector<double> with(c.entries), without(d, 0.0);
    for (int j = 0; j < 999; ++j) {
      const HyperVector v = mind_sample(d, 0.5, rng);
      for (std::size_t i = 0; i < d; ++i) with[i] += v.entries[i];
    }
    for (int j = 0; j < 1000; ++j) {
      const HyperVector v = mind_sample(d, 0.5, rng);
      for (std::size_t i = 0; i < d; ++i) without[i] += v.entries[i];
    }
    present.push_back(dot(c.entries, with));
    absent.push_back(dot(c.entries, without));
  }
  auto mean_and_se = [](const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::pair{m, std::sqrt(ss / (n - 1) / n)};
  };
  const auto [pm, pse] = mean_and_se(present);
  const auto [am, ase] = mean_and_se(absent);
  const double theory_se = std::sqrt(999.0 * d) * 0.25 / std::sqrt(double(kTrials));
  EXPECT_NEAR(pse, theory_se, 0.25 * theory_se);
  EXPECT_NEAR(ase, theory_se, 0.25 * theory_se);
  EXPECT_NEAR(pm, 1024.0, 4 * pse);
  EXPECT_LT(std::fabs(am), 4 * ase);
}

TEST(Membership, SeparationAtTwoThousandDims) {
  const MembershipStats st = membership_experiment(2048, 0.5, 50, 1000, 77);
  EXPECT_DOUBLE_EQ(st.expected_present, 512.0);
  EXPECT_NEAR(st.present_mean, 512.0, 51.2);
  EXPECT_LT(std::fabs(st.absent_mean), 0.05 * 512.0);
  EXPECT_LT(st.overlap, 0.01);
}
