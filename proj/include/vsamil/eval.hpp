#pragma once

// Metrics and the MIL-validity harness: AUROC/accuracy, poisoned datasets
// whose easy shortcut flips between train and test, and monotonicity audits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vsamil/data.hpp"
#include "vsamil/error.hpp"
#include "vsamil/json_io.hpp"

namespace vsamil {

/// Mann–Whitney U / (n_pos n_neg); tied scores count one half.
inline double auroc(std::span<const double> scores, std::span<const BagLabel> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
  const auto n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == BagLabel::positive) {
        pos_rank_sum += avg_rank;
        ++npos;
      }
    }
    i = j;
  }
  const std::size_t nneg = n - npos;
  if (npos == 0 || nneg == 0) throw ValueError("auroc: both classes must be present");
  const double np = static_cast<double>(npos), nn = static_cast<double>(nneg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct MetricsReport {
  double accuracy = 0.0;
  /// NaN when only one class is present.
  double auroc = std::numeric_limits<double>::quiet_NaN();
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t n = 0;

  Json to_json() const {
    Json j{{"accuracy", accuracy}, {"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn}, {"n_bags", n}};
    j["auroc"] = std::isfinite(auroc) ? Json(auroc) : Json(nullptr);
    return j;
  }

  static MetricsReport from_json(const Json& j) {
    MetricsReport m;
    m.accuracy = json_field<double>(j, "accuracy");
    m.tp = json_field<std::size_t>(j, "tp");
    m.fp = json_field<std::size_t>(j, "fp");
    m.tn = json_field<std::size_t>(j, "tn");
    m.fn = json_field<std::size_t>(j, "fn");
    m.n = json_field<std::size_t>(j, "n_bags");
    if (j.contains("auroc") && !j.at("auroc").is_null()) m.auroc = j.at("auroc").get<double>();
    return m;
  }
};

/// Predictions are positive iff score > 0.
inline MetricsReport accuracy_report(std::span<const double> scores, std::span<const BagLabel> labels) {
  if (scores.size() != labels.size()) throw ShapeError("accuracy_report: scores and labels differ in length");
  MetricsReport m;
  m.n = scores.size();
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] > 0;
    const bool actual = labels[i] == BagLabel::positive;
    pos = pos || actual;
    neg = neg || !actual;
    if (predicted && actual) ++m.tp;
    if (predicted && !actual) ++m.fp;
    if (!predicted && !actual) ++m.tn;
    if (!predicted && actual) ++m.fn;
  }
  m.accuracy = m.n ? static_cast<double>(m.tp + m.tn) / static_cast<double>(m.n) : 0.0;
  if (pos && neg) m.auroc = auroc(scores, labels);
  return m;
}

using BagScorer = std::function<double(const Bag&)>;

inline MetricsReport evaluate(const BagScorer& scorer, const MilDataset& ds) {
  std::vector<double> scores;
  scores.reserve(ds.bags.size());
  for (const auto& b : ds.bags) scores.push_back(scorer(b));
  const auto labels = ds.labels();
  return accuracy_report(scores, labels);
}

// ---------------------------------------------------------------------------
// Poisoned datasets
//
// Every variant keeps the valid rule: a bag is positive iff it holds a witness
// instance (feature 0 near +4). Each also plants a shortcut that predicts the
// label perfectly on train and is inverted on test:
//   1. an anti-witness instance (feature 1 near +4) marks negative train bags
//      and positive test bags;
//   2. positive train bags are large and negative ones small, reversed at test;
//   3. background instances of positive train bags are shifted on features
//      2.., those of negative test bags at test.

struct PoisonSpec {
  int variant = 1;
  std::size_t feature_dim = 8;
  std::size_t min_bag = 4;
  std::size_t max_bag = 16;
  std::uint64_t seed = 0;
  std::size_t train_bags = 200;
  std::size_t test_bags = 200;
  double prototype_scale = 4.0;
  double background_shift = 0.75;
};

inline constexpr double kPrototypeNoise = 0.3;

inline Instance poison_witness(const PoisonSpec& spec) {
  Instance w(spec.feature_dim, 0.0);
  w[0] = spec.prototype_scale;
  return w;
}

inline Instance poison_anti_witness(const PoisonSpec& spec) {
  Instance a(spec.feature_dim, 0.0);
  a[1] = spec.prototype_scale;
  return a;
}

namespace detail {

template <class Rng>
Instance jitter(const Instance& proto, Rng& rng) {
  std::normal_distribution<double> noise(0.0, kPrototypeNoise);
  Instance x = proto;
  for (auto& v : x) v += noise(rng);
  return x;
}

template <class Rng>
Bag poison_bag(const PoisonSpec& spec, bool positive, bool test, std::size_t index, Rng& rng) {
  // Shortcut direction: in train it agrees with the label, at test it is reversed.
  const bool shortcut_on = test ? !positive : positive;
  std::size_t lo = spec.min_bag, hi = spec.max_bag;
  if (spec.variant == 2) {
    const std::size_t mid = (spec.min_bag + spec.max_bag) / 2;
    if (shortcut_on) lo = mid + 1; else hi = mid;
  }
  std::uniform_int_distribution<std::size_t> size_dist(lo, hi);
  std::uniform_int_distribution<int> one_or_two(1, 2);
  std::normal_distribution<double> bg(0.0, 1.0);

  Bag bag{(test ? "test-" : "train-") + std::to_string(index), positive ? BagLabel::positive : BagLabel::negative, {}};
  const std::size_t n = size_dist(rng);
  std::size_t planted = 0;
  if (positive) {
    const int w = one_or_two(rng);
    for (int i = 0; i < w; ++i, ++planted) bag.instances.push_back(jitter(poison_witness(spec), rng));
  }
  // Variant 1's shortcut is carried by negative train bags and positive test bags.
  if (spec.variant == 1 && (test ? positive : !positive)) {
    const int a = one_or_two(rng);
    for (int i = 0; i < a; ++i, ++planted) bag.instances.push_back(jitter(poison_anti_witness(spec), rng));
  }
  const double shift = spec.variant == 3 && shortcut_on ? spec.background_shift : 0.0;
  for (std::size_t i = planted; i < std::max(n, planted + 1); ++i) {
    Instance x(spec.feature_dim);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = bg(rng) + (j >= 2 ? shift : 0.0);
    bag.instances.push_back(std::move(x));
  }
  std::shuffle(bag.instances.begin(), bag.instances.end(), rng);
  return bag;
}

}  // namespace detail

/// Train and test bags (split-assigned), half positive each. Seed-deterministic.
inline MilDataset generate_poison(const PoisonSpec& spec) {
  if (spec.variant < 1 || spec.variant > 3) throw ValueError("poison: variant must be 1, 2 or 3");
  if (spec.feature_dim < 3) throw ValueError("poison: feature_dim must be >= 3");
  if (spec.min_bag < 2 || spec.max_bag <= spec.min_bag + 1) throw ValueError("poison: need 2 <= min_bag < max_bag - 1");
  if (spec.train_bags < 2 || spec.test_bags < 2) throw ValueError("poison: need at least 2 bags per split");
  std::mt19937_64 rng(spec.seed);
  MilDataset ds;
  ds.name = "poison" + std::to_string(spec.variant);
  ds.feature_dim = spec.feature_dim;
  for (bool test : {false, true}) {
    const std::size_t count = test ? spec.test_bags : spec.train_bags;
    for (std::size_t i = 0; i < count; ++i) {
      Bag b = detail::poison_bag(spec, i % 2 == 0, test, i, rng);
      ds.split[b.id] = test ? Split::test : Split::train;
      ds.bags.push_back(std::move(b));
    }
  }
  return ds;
}

/// Hand-coded calibration scorers for the validity harness.
namespace controls {

/// Valid MIL rule: positive iff some instance sits near the witness.
inline BagScorer witness_oracle(const PoisonSpec& spec) {
  const double half = spec.prototype_scale / 2.0;
  return [half](const Bag& b) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& x : b.instances) best = std::max(best, x[0]);
    return best - half;
  };
}

/// Invalid rule: negative iff an anti-witness is present.
inline BagScorer anti_witness_oracle(const PoisonSpec& spec) {
  const double half = spec.prototype_scale / 2.0;
  return [half](const Bag& b) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& x : b.instances) best = std::max(best, x[1]);
    return half - best;
  };
}

/// Mean pooling with a negative weight: not monotone in the instance set.
inline BagScorer negative_mean_pool(Instance weights) {
  return [w = std::move(weights)](const Bag& b) {
    double s = 0.0;
    for (const auto& x : b.instances)
      for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
    return -s / static_cast<double>(b.size());
  };
}

}  // namespace controls

// ---------------------------------------------------------------------------
// milcheck

using PipelineFactory = std::function<BagScorer(const MilDataset& train)>;

struct MilcheckRow {
  int variant = 0;
  MetricsReport train;
  MetricsReport test;
  bool pass = false;
  std::string error;  // non-empty when training failed
};

inline constexpr double kMilcheckPassAuroc = 0.5;

/// Fits a fresh pipeline per variant; pass iff test AUROC >= `threshold`.
/// A failure in one variant is recorded and the others still run.
inline std::vector<MilcheckRow> milcheck(const PipelineFactory& fit, std::span<const PoisonSpec> specs,
                                         double threshold = kMilcheckPassAuroc) {
  std::vector<MilcheckRow> rows;
  for (const auto& spec : specs) {
    MilcheckRow row;
    row.variant = spec.variant;
    try {
      const MilDataset ds = generate_poison(spec);
      const MilDataset train = ds.subset(Split::train);
      const BagScorer scorer = fit(train);
      row.train = evaluate(scorer, train);
      row.test = evaluate(scorer, ds.subset(Split::test));
      row.pass = std::isfinite(row.test.auroc) && row.test.auroc >= threshold;
    } catch (const std::exception& e) {
      row.error = e.what();
      row.pass = false;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Fixed column order: variant, split, accuracy, auroc, pass.
inline std::string milcheck_csv(std::span<const MilcheckRow> rows) {
  std::ostringstream os;
  os.precision(17);
  os << "variant,split,accuracy,auroc,pass\n";
  for (const auto& r : rows) {
    for (const auto* part : {"train", "test"}) {
      const MetricsReport& m = std::string(part) == "train" ? r.train : r.test;
      os << r.variant << ',' << part << ',' << m.accuracy << ',' << m.auroc << ',' << (r.pass ? "true" : "false") << '\n';
    }
  }
  return os.str();
}

inline Json milcheck_json(std::span<const MilcheckRow> rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    Json j{{"variant", r.variant}, {"train", r.train.to_json()}, {"test", r.test.to_json()}, {"pass", r.pass}};
    if (!r.error.empty()) j["error"] = r.error;
    out.push_back(std::move(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monotonicity audit

struct AuditResult {
  std::size_t trials = 0;
  std::size_t violations = 0;
};

/// Injects a random instance (drawn from another random bag) into a random
/// bag and counts how often the score drops.
inline AuditResult monotonicity_audit(const BagScorer& scorer, const MilDataset& ds, std::size_t trials,
                                      std::uint64_t seed) {
  if (ds.bags.empty()) throw ValueError("monotonicity_audit: empty dataset");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_bag(0, ds.bags.size() - 1);
  AuditResult r{trials, 0};
  for (std::size_t t = 0; t < trials; ++t) {
    const Bag& host = ds.bags[pick_bag(rng)];
    const Bag& donor = ds.bags[pick_bag(rng)];
    std::uniform_int_distribution<std::size_t> pick_inst(0, donor.size() - 1);
    Bag grown = host;
    grown.instances.push_back(donor.instances[pick_inst(rng)]);
    if (scorer(grown) < scorer(host)) ++r.violations;
  }
  return r;
}

}  // namespace vsamil
