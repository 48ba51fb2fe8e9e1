#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "support.hpp"
#include "vsamil/classifier.hpp"

using namespace vsamil;

namespace {

ConceptBank bank_of(std::vector<Instance> rows, double bias) {
  ConceptBank b;
  b.concepts.value = Tensor::from_rows(rows);
  b.bias.value = Tensor::scalar(bias);
  return b;
}

}  // namespace

TEST(ScoreBag, SingleConceptArithmetic) {
  const auto bank = bank_of({{1, 0}}, -1.0);
  const std::vector<Instance> bag{{3, 7}};
  const BagScore s = score_bag(bank, bag);
  EXPECT_EQ(s.score, 2.0);
  EXPECT_EQ(s.label, BagLabel::positive);
}

TEST(ScoreBag, MinOverConceptsOfMaxOverInstances) {
  // Concept maxes are 3 (instance 0) and 1 (instance 1).
  const auto bank = bank_of({{1, 0}, {0, 1}}, 0.0);
  std::vector<Instance> bag{{3, 0}, {0, 1}};
  const BagScore s = score_bag(bank, bag);
  EXPECT_EQ(s.score, 1.0);
  EXPECT_EQ(s.limiting_concept, 1u);
  EXPECT_EQ(s.winners[0].instance, 0u);
  EXPECT_EQ(s.winners[1].instance, 1u);
  bag.push_back({0, 5});
  EXPECT_EQ(score_bag(bank, bag).score, 3.0);
}

TEST(ScoreBag, FirstIndexWinsTies) {
  const auto bank = bank_of({{1}}, 0.0);
  const std::vector<Instance> bag{{2}, {5}, {5}};
  EXPECT_EQ(score_bag(bank, bag).winners[0].instance, 1u);
}

TEST(ScoreBag, PermutationAndDuplicationInvariant) {
  std::mt19937_64 rng(3);
  const auto bank = ConceptBank::create(4, 16, 1);
  std::vector<Instance> bag;
  for (int i = 0; i < 6; ++i) bag.push_back(mind_sample(16, 0.5, rng()).entries);
  const double s = score_bag(bank, bag).score;
  for (int t = 0; t < 10; ++t) {
    auto p = bag;
    std::shuffle(p.begin(), p.end(), rng);
    EXPECT_EQ(score_bag(bank, p).score, s);
    p.push_back(p[t % p.size()]);
    EXPECT_EQ(score_bag(bank, p).score, s);
  }
}

TEST(ScoreBag, RejectsEmptyAndMismatchedBags) {
  const auto bank = bank_of({{1, 0}}, 0.0);
  EXPECT_THROW(score_bag(bank, std::vector<Instance>{}), ValueError);
  EXPECT_THROW(score_bag(bank, std::vector<Instance>{{1, 2, 3}}), ShapeError);
}

TEST(ScoreBag, MonotoneOverRandomTriples) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> k_pick(1, 8), n_pick(1, 10);
  std::size_t violations = 0, flips = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 12;
    auto bank = ConceptBank::create(k_pick(rng), d, rng());
    bank.bias.value = Tensor::scalar(g(rng));
    std::vector<Instance> bag(n_pick(rng), Instance(d));
    for (auto& x : bag)
      for (auto& v : x) v = g(rng);
    Instance extra(d);
    for (auto& v : extra) v = g(rng);
    const BagScore before = score_bag(bank, bag);
    bag.push_back(extra);
    const BagScore after = score_bag(bank, bag);
    if (after.score < before.score) ++violations;
    if (before.label == BagLabel::positive && after.label == BagLabel::negative) ++flips;
  }
  EXPECT_EQ(violations, 0u);
  EXPECT_EQ(flips, 0u);
}

TEST(ExplainBag, WinnersAndPositiveInstances) {
  const auto bank = bank_of({{1}}, 0.0);
  const std::vector<Instance> bag{{3}, {-1}};
  const auto e = explain_bag(bank, bag);
  ASSERT_EQ(e.winners.size(), 1u);
  EXPECT_EQ(e.winners[0].instance, 0u);
  EXPECT_EQ(e.winners[0].value, 3.0);
  EXPECT_EQ(e.positive_instances, std::vector<std::size_t>{0});
}

TEST(ExplainBag, AllNegativeResponses) {
  const auto bank = bank_of({{1}, {2}}, 0.0);
  const std::vector<Instance> bag{{-3}, {-1}};
  const auto e = explain_bag(bank, bag);
  EXPECT_TRUE(e.positive_instances.empty());
  EXPECT_EQ(e.label, BagLabel::negative);
}

TEST(ExplainBag, WinnersRecombineToTheScore) {
  const auto bank = ConceptBank::create(5, 32, 8);
  std::vector<Instance> bag;
  for (std::uint64_t i = 0; i < 7; ++i) bag.push_back(mind_sample(32, 0.5, i + 100).entries);
  const auto e = explain_bag(bank, bag);
  double m = e.winners[0].value;
  for (const auto& w : e.winners) m = std::min(m, w.value);
  EXPECT_EQ(m + bank.bias_value(), score_bag(bank, bag).score);
  EXPECT_EQ(e.score, score_bag(bank, bag).score);
}

TEST(Classifier, LossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  auto bank = ConceptBank::create(3, 8, 4);
  bank.bias.value = Tensor::scalar(0.2);
  std::vector<Bag> bags;
  for (int i = 0; i < 6; ++i) {
    Bag b{"b" + std::to_string(i), i % 2 ? BagLabel::positive : BagLabel::negative, {}};
    for (int j = 0; j < 3 + i; ++j) b.instances.push_back(mind_sample(8, 0.5, rng()).entries);
    bags.push_back(std::move(b));
  }
  auto loss = [&] {
    Graph g;
    return classifier_loss(bank, g, bags).value().item();
  };
  Graph g;
  const auto grads = g.backward(classifier_loss(bank, g, bags));
  const auto numeric = vsamil::oracle::numeric_gradients({&bank.concepts, &bank.bias}, loss);
  EXPECT_LT(vsamil::oracle::relative_error(grads(bank.concepts), numeric.at("concepts")), 1e-3);
  EXPECT_LT(vsamil::oracle::relative_error(grads(bank.bias), numeric.at("bias")), 1e-3);
}

TEST(Classifier, EqualConceptsTieToTheFirstRow) {
  const Instance c{0.5, -0.5, 0.5};
  auto bank = bank_of({c, c}, 0.0);
  const std::vector<Bag> bags{{"p", BagLabel::positive, {{1, 0, 0}, {0, 1, 0}}},
                              {"n", BagLabel::negative, {{0, 0, 1}}}};
  for (const auto& b : bags) {
    const auto s = score_bag(bank, b.instances);
    EXPECT_EQ(s.winners[0].value, s.winners[1].value);
    EXPECT_EQ(s.limiting_concept, 0u);
  }
  Graph g;
  const auto grads = g.backward(classifier_loss(bank, g, bags));
  const Tensor& gc = grads(bank.concepts);
  EXPECT_TRUE(std::any_of(gc.row(0).begin(), gc.row(0).end(), [](double v) { return v != 0.0; }));
  EXPECT_TRUE(std::all_of(gc.row(1).begin(), gc.row(1).end(), [](double v) { return v == 0.0; }));
}

TEST(Classifier, SeparableToyReachesLowLoss) {
  auto bank = ConceptBank::create(1, 2, 3);
  const std::vector<Bag> bags{{"p", BagLabel::positive, {{1, 1}}}, {"n", BagLabel::negative, {{-1, -1}}}};
  const auto r = train_classifier(bank, bags, {50, 16, 0.1, 0.01, 0});
  Graph g;
  EXPECT_LT(classifier_loss(bank, g, bags).value().item(), 0.1);
  EXPECT_EQ(r.epoch_loss.size(), 50u);
}

TEST(Classifier, TrainingIsDeterministic) {
  const std::vector<Bag> bags{{"p", BagLabel::positive, {{1, 0}, {0, 1}}},
                              {"n", BagLabel::negative, {{-1, 0}}},
                              {"q", BagLabel::positive, {{2, 1}}}};
  auto a = ConceptBank::create(2, 2, 5), b = ConceptBank::create(2, 2, 5);
  EXPECT_EQ(train_classifier(a, bags, {10, 2, 0.1, 0.01, 9}).epoch_loss,
            train_classifier(b, bags, {10, 2, 0.1, 0.01, 9}).epoch_loss);
  EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(Classifier, NeedsBothClasses) {
  auto bank = ConceptBank::create(1, 1, 0);
  const std::vector<Bag> bags{{"p", BagLabel::positive, {{1}}}};
  EXPECT_THROW(train_classifier(bank, bags, {}), ValueError);
}

TEST(ConceptBankJson, RoundTrip) {
  const auto bank = ConceptBank::create(3, 5, 12);
  const auto back = ConceptBank::from_json(Json::parse(bank.to_json().dump()));
  EXPECT_EQ(back.concepts.value, bank.concepts.value);
  EXPECT_EQ(back.bias_value(), bank.bias_value());
  EXPECT_EQ(back.seed, bank.seed);
}
