#pragma once

// Concept-bank MaxNetwork. With responses r_jk = v_j · c_k the bag score is
//   min_k max_j r_jk + b,
// so adding an instance can only raise each per-concept maximum and hence the
// score: a bag becomes positive only by containing a strongly responding
// instance, never through the absence of one.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vsamil/data.hpp"
#include "vsamil/diffnum.hpp"
#include "vsamil/error.hpp"
#include "vsamil/hlb.hpp"
#include "vsamil/json_io.hpp"

namespace vsamil {

struct ConceptBank {
  Parameter concepts{"concepts", Tensor()};  // K × d
  Parameter bias{"bias", Tensor::scalar(0.0)};
  std::uint64_t seed = 0;

  /// K MiND-sampled concept rows and a zero bias.
  static ConceptBank create(std::size_t num_concepts, std::size_t dim, std::uint64_t seed, double mu = kDefaultMu) {
    if (num_concepts == 0 || dim == 0) throw ValueError("concept bank: K and d must be >= 1");
    std::mt19937_64 rng(seed);
    Tensor c(Shape{num_concepts, dim});
    for (std::size_t k = 0; k < num_concepts; ++k) mind_fill(c.values().subspan(k * dim, dim), mu, rng);
    ConceptBank bank;
    bank.concepts.value = std::move(c);
    bank.seed = seed;
    return bank;
  }

  std::size_t size() const noexcept { return concepts.value.rows(); }
  std::size_t dim() const noexcept { return concepts.value.cols(); }
  double bias_value() const { return bias.value.item(); }
  std::span<const double> concept_row(std::size_t k) const { return concepts.value.row(k); }

  Json to_json() const {
    return Json{{"K", size()}, {"seed", seed}, {"bias", bias_value()}, {"concepts", tensor_to_json(concepts.value)}};
  }

  static ConceptBank from_json(const Json& j) {
    ConceptBank bank;
    bank.seed = json_field<std::uint64_t>(j, "seed");
    bank.bias.value = Tensor::scalar(json_field<double>(j, "bias"));
    bank.concepts.value = tensor_from_json(json_child(j, "concepts"));
    if (bank.concepts.value.rank() != 2 || json_field<std::size_t>(j, "K") != bank.size()) {
      throw DataError("concept bank: K does not match the concept matrix");
    }
    return bank;
  }
};

struct ConceptWinner {
  double value = 0.0;         // max_j v_j · c_k
  std::size_t instance = 0;   // first j attaining it
};

struct BagScore {
  double score = 0.0;
  std::vector<ConceptWinner> winners;  // one per concept
  std::size_t limiting_concept = 0;    // first k attaining the minimum
  BagLabel label = BagLabel::negative;
};

namespace detail {

inline void check_bag(const ConceptBank& bank, std::span<const Instance> bag, const char* op) {
  if (bag.empty()) throw ValueError(std::string(op) + ": empty bag");
  for (const auto& v : bag) {
    if (v.size() != bank.dim()) {
      throw ShapeError(std::string(op) + ": instance has " + std::to_string(v.size()) + " entries, concepts " +
                       std::to_string(bank.dim()));
    }
  }
}

}  // namespace detail

inline BagScore score_bag(const ConceptBank& bank, std::span<const Instance> bag) {
  detail::check_bag(bank, bag, "score_bag");
  BagScore s;
  s.winners.resize(bank.size());
  for (std::size_t k = 0; k < bank.size(); ++k) {
    const auto c = bank.concept_row(k);
    ConceptWinner w{dot(bag[0], c), 0};
    for (std::size_t j = 1; j < bag.size(); ++j) {
      const double r = dot(bag[j], c);
      if (r > w.value) w = {r, j};
    }
    s.winners[k] = w;
    if (k == 0 || w.value < s.winners[s.limiting_concept].value) s.limiting_concept = k;
  }
  s.score = s.winners[s.limiting_concept].value + bank.bias_value();
  s.label = s.score > 0 ? BagLabel::positive : BagLabel::negative;
  return s;
}

struct ConceptEvidence {
  std::size_t concept_index = 0;
  std::size_t instance = 0;
  double value = 0.0;
};

struct BagExplanation {
  std::vector<ConceptEvidence> winners;
  /// Instances j with max_k v_j · c_k + b > 0.
  std::vector<std::size_t> positive_instances;
  double score = 0.0;
  BagLabel label = BagLabel::negative;
};

inline BagExplanation explain_bag(const ConceptBank& bank, std::span<const Instance> bag) {
  const BagScore s = score_bag(bank, bag);
  BagExplanation e;
  e.score = s.score;
  e.label = s.label;
  for (std::size_t k = 0; k < bank.size(); ++k) e.winners.push_back({k, s.winners[k].instance, s.winners[k].value});
  for (std::size_t j = 0; j < bag.size(); ++j) {
    double best = dot(bag[j], bank.concept_row(0));
    for (std::size_t k = 1; k < bank.size(); ++k) best = std::max(best, dot(bag[j], bank.concept_row(k)));
    if (best + bank.bias_value() > 0) e.positive_instances.push_back(j);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Training

/// Mean BCE of sigmoid(score) over `bags`, as a graph node.
inline Var classifier_loss(const ConceptBank& bank, Graph& g, std::span<const Bag> bags) {
  if (bags.empty()) throw ValueError("classifier_loss: no bags");
  Var concepts_t = transpose(g.parameter(bank.concepts));
  Var bias = g.parameter(bank.bias);
  Var total;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    detail::check_bag(bank, bags[i].instances, "classifier_loss");
    Var v = g.constant(Tensor::from_rows(bags[i].instances));
    Var per_concept = max_reduce(matmul(v, concepts_t), Reduce::per_column);
    Var score = min_reduce(per_concept) + bias;
    Var loss = bce_with_logits(score, bce_target(bags[i].label));
    total = i == 0 ? loss : total + loss;
  }
  return scale(total, 1.0 / static_cast<double>(bags.size()));
}

struct ClassifierTrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr = 0.1;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

struct ClassifierTrainReport {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// AdamW on {concepts, bias}; `bags` hold (quantized) hypervectors.
inline ClassifierTrainReport train_classifier(ConceptBank& bank, std::span<const Bag> bags,
                                              const ClassifierTrainConfig& cfg) {
  if (bags.empty()) throw ValueError("train_classifier: empty training set");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw ValueError("train_classifier: epochs and batch size must be >= 1");
  const bool has_pos = std::any_of(bags.begin(), bags.end(), [](const Bag& b) { return b.label == BagLabel::positive; });
  const bool has_neg = std::any_of(bags.begin(), bags.end(), [](const Bag& b) { return b.label == BagLabel::negative; });
  if (!has_pos || !has_neg) throw ValueError("train_classifier: training set needs both classes");

  AdamW opt({&bank.concepts, &bank.bias}, AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(bags.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Bag> batch;
  ClassifierTrainReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++steps) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) batch.push_back(bags[order[i]]);
      Graph g;
      Var loss = classifier_loss(bank, g, batch);
      const double l = loss.value().item();
      if (!std::isfinite(l)) {
        throw NumericalError("classifier: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                             std::to_string(steps + 1));
      }
      sum += l;
      opt.step(g.backward(loss));
    }
    report.epoch_loss.push_back(sum / static_cast<double>(steps));
  }
  return report;
}

}  // namespace vsamil
