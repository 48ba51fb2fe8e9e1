#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "vsamil/encoder.hpp"

using namespace vsamil;
using vsamil::oracle::numeric_gradients;
using vsamil::oracle::random_tensor;
using vsamil::oracle::relative_error;

namespace {

AutoencoderModel small_model(std::size_t blocks = 2, std::size_t layers = 2, std::uint64_t seed = 5) {
  return AutoencoderModel::create({5, 6, blocks, layers, 0.5, Property1Mode::squared}, seed);
}

std::vector<Instance> random_instances(std::size_t n, std::size_t p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<Instance> out(n, Instance(p));
  for (auto& x : out)
    for (auto& v : x) v = g(rng);
  return out;
}

double penalty(const Tensor& latent, double mu, Property1Mode mode, int term) {
  Graph g;
  const auto t = property_penalties(g.constant(latent), mu, mode);
  const Var* v[] = {&t.property1, &t.property2, &t.property3};
  return v[term - 1]->value().item();
}

}  // namespace

TEST(Encoder, BlocksAreIdentitiesAtInit) {
  const auto m = small_model();
  const auto xs = random_instances(4, 5, 1);
  const Tensor z = m.encode(AutoencoderModel::stack(xs));
  const auto& w = m.input_layer().weight.value;
  const auto& b = m.input_layer().bias.value;
  for (std::size_t r = 0; r < xs.size(); ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      double expect = b[c];
      for (std::size_t i = 0; i < 5; ++i) expect += xs[r][i] * w[i * 6 + c];
      EXPECT_NEAR(z.row(r)[c], expect, 1e-12);
    }
  }
}

TEST(Encoder, Deterministic) {
  const auto m = small_model();
  const auto x = random_instances(1, 5, 2)[0];
  EXPECT_EQ(m.encode(std::span<const double>(x)), m.encode(std::span<const double>(x)));
  EXPECT_EQ(m.encode(std::span<const double>(x)).size(), 6u);
  EXPECT_EQ(m.decode(m.encode(std::span<const double>(x))).size(), 5u);
}

TEST(Encoder, WrongWidthIsShapeError) {
  const auto m = small_model();
  EXPECT_THROW(m.encode(Tensor::matrix(1, 4, {1, 2, 3, 4})), ShapeError);
}

TEST(HlbLoss, ZeroLatentPenalties) {
  const Tensor z(Shape{1, 16}, 0.0);
  EXPECT_EQ(penalty(z, 0.5, Property1Mode::squared, 1), 0.0);
  EXPECT_EQ(penalty(z, 0.5, Property1Mode::squared, 2), 0.25);
  EXPECT_EQ(penalty(z, 0.5, Property1Mode::squared, 3), 4.0);
}

TEST(HlbLoss, AlternatingHalfIsAFixedPoint) {
  Tensor z(Shape{2, 16});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = i % 2 ? -0.5 : 0.5;
  for (int term : {1, 2, 3}) EXPECT_EQ(penalty(z, 0.5, Property1Mode::squared, term), 0.0) << "term " << term;
}

TEST(HlbLoss, LiteralPropertyOneIsTheSignedMean) {
  const Tensor z = Tensor::matrix(1, 4, {-0.5, -0.5, 0.25, -0.25});
  EXPECT_DOUBLE_EQ(penalty(z, 0.5, Property1Mode::literal, 1), -0.25);
  EXPECT_DOUBLE_EQ(penalty(z, 0.5, Property1Mode::squared, 1), 0.0625);
}

TEST(HlbLoss, GradientMatchesFiniteDifferences) {
  auto m = small_model();
  // Non-zero gates so gradients reach every block layer.
  std::mt19937_64 rng(11);
  for (Parameter* p : m.parameters()) {
    if (p->name.ends_with(".alpha")) p->value = Tensor::scalar(0.3 + 0.1 * static_cast<double>(rng() % 5));
  }
  const Tensor batch = random_tensor({7, 5}, rng);
  auto loss = [&] {
    Graph g;
    return hlb_loss(m, g, batch).total.value().item();
  };
  Graph g;
  const auto grads = g.backward(hlb_loss(m, g, batch).total);
  const auto numeric = numeric_gradients(m.parameters(), loss);
  for (Parameter* p : m.parameters()) {
    EXPECT_LT(relative_error(grads(*p), numeric.at(p->name)), 1e-3) << p->name;
  }
}

TEST(HlbLoss, NonNegativeSumOfItsTerms) {
  const auto m = small_model();
  Graph g;
  const auto t = hlb_loss(m, g, AutoencoderModel::stack(random_instances(9, 5, 4)));
  EXPECT_GE(t.total.value().item(), 0.0);
  EXPECT_NEAR(t.total.value().item(),
              t.reconstruction.value().item() + t.property1.value().item() + t.property2.value().item() +
                  t.property3.value().item(),
              1e-12);
}

TEST(TrainAutoencoder, OneEpochLowersTheLoss) {
  auto m = small_model(1, 1);
  const auto bag = random_instances(6, 5, 3);
  const double before = evaluate_loss(m, bag).total;
  train_autoencoder(m, bag, {1, 16, 0.01, 0.01, 1});
  EXPECT_LT(evaluate_loss(m, bag).total, before);
}

TEST(TrainAutoencoder, SeedFixedRunsAreBitIdentical) {
  const auto xs = random_instances(40, 5, 6);
  auto a = small_model(), b = small_model();
  const auto ra = train_autoencoder(a, xs, {5, 8, 0.01, 0.01, 42});
  const auto rb = train_autoencoder(b, xs, {5, 8, 0.01, 0.01, 42});
  ASSERT_EQ(ra.epochs.size(), 5u);
  for (std::size_t e = 0; e < 5; ++e) EXPECT_EQ(ra.epochs[e].total, rb.epochs[e].total);
  EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(TrainAutoencoder, RejectsEmptyInput) {
  auto m = small_model();
  EXPECT_THROW(train_autoencoder(m, std::vector<Instance>{}, {}), ValueError);
}

TEST(TrainAutoencoder, DivergenceIsReportedWithEpochAndStep) {
  auto m = small_model(1, 1);
  auto xs = random_instances(4, 5, 8);
  xs[2][0] = std::numeric_limits<double>::infinity();
  try {
    train_autoencoder(m, xs, {2, 16, 0.01, 0.0, 0});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, step 1"), std::string::npos) << e.what();
  }
}

TEST(TrainAutoencoder, Musk1PenaltiesFall) {
  const MilDataset ds = vsamil::oracle::load_benchmark("musk1");
  const auto xs = Normalizer::fit(ds).apply(ds);
  AutoencoderModel m = AutoencoderModel::create({ds.feature_dim, 128, 1, 3, 0.5, Property1Mode::squared}, 1);
  const double abs_before = distribution_report(m, all_instances(xs)).abs_mean.value;
  const auto r = train_autoencoder(m, all_instances(xs), {50, 16, 0.01, 0.01, 2});
  const auto& first = r.epochs.front();
  const auto& last = r.epochs.back();
  EXPECT_LT(last.property1, first.property1);
  EXPECT_LT(last.property2, first.property2);
  EXPECT_LT(last.property3, first.property3);
  EXPECT_LE(last.total, first.total);
  const double abs_after = distribution_report(m, all_instances(xs)).abs_mean.value;
  EXPECT_LT(std::fabs(abs_after - 0.5), std::fabs(abs_before - 0.5));
}

TEST(Distribution, ConstantHalf) {
  const std::vector<Instance> z(3, Instance(8, 0.5));
  const auto r = distribution_report(z);
  EXPECT_DOUBLE_EQ(r.mean.value, 0.5);
  EXPECT_DOUBLE_EQ(r.abs_mean.value, 0.5);
  EXPECT_DOUBLE_EQ(r.mean.std, 0.0);
  EXPECT_DOUBLE_EQ(r.abs_mean.std, 0.0);
  EXPECT_DOUBLE_EQ(r.l2_norm.value, std::sqrt(2.0));
  EXPECT_EQ(r.vectors, 3u);
}

TEST(Distribution, TableHasTheExpectedColumns) {
  const std::vector<Instance> z(2, Instance{0.5, -0.5});
  const DistributionRow row{"MUSK1", distribution_report(z), distribution_report(z)};
  const std::string t = format_distribution_table(std::span(&row, 1));
  EXPECT_EQ(t,
            "Dataset\tAbsolute Mean(Train)\tAbsolute Mean(Test)\tMean(Train)\tMean(Test)\n"
            "MUSK1\t0.500 ± 0.000\t0.500 ± 0.000\t0.000 ± 0.500\t0.000 ± 0.500\n");
}

TEST(EncoderJson, RoundTripIsExact) {
  auto m = small_model();
  train_autoencoder(m, random_instances(20, 5, 9), {2, 8, 0.01, 0.01, 3});
  const auto back = AutoencoderModel::from_json(Json::parse(m.to_json().dump()));
  EXPECT_EQ(back.to_json(), m.to_json());
  const auto x = random_instances(1, 5, 10)[0];
  EXPECT_EQ(back.encode(std::span<const double>(x)), m.encode(std::span<const double>(x)));
}

TEST(EncoderJson, ShapeMismatchNamesTheParameter) {
  Json j = small_model().to_json();
  j["parameters"]["enc.in.bias"] = Json::array({Json::array({1.0, 2.0})});
  try {
    AutoencoderModel::from_json(j);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("enc.in.bias"), std::string::npos);
  }
}
