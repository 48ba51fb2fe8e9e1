#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "vsamil/data.hpp"

using namespace vsamil;

namespace {

MilDataset toy(std::size_t pos, std::size_t neg) {
  MilDataset ds{"toy", 1, {}, {}};
  for (std::size_t i = 0; i < pos + neg; ++i) {
    ds.bags.push_back({"b" + std::to_string(i), i < pos ? BagLabel::positive : BagLabel::negative, {{double(i)}}});
  }
  return ds;
}

MilDataset musk1() {
  CsvSchema s;
  s.bag_column = 1;
  s.label_column = 0;
  return convert_csv(std::filesystem::path(VSAMIL_DATA_DIR) / "musk1.csv", s);
}

}  // namespace

TEST(Jsonl, SingleRecord) {
  std::istringstream in(R"({"bag_id":"b1","label":1,"instances":[[0.0,1.0]]})");
  const MilDataset ds = read_jsonl(in, "one");
  ASSERT_EQ(ds.bags.size(), 1u);
  EXPECT_EQ(ds.feature_dim, 2u);
  EXPECT_EQ(ds.bags[0].label, BagLabel::positive);
}

TEST(Jsonl, ErrorsNameTheLine) {
  auto message = [](const std::string& text) {
    std::istringstream in(text);
    try {
      read_jsonl(in, "bad");
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string ok = R"({"bag_id":"a","label":-1,"instances":[[1,2]]})";
  EXPECT_NE(message(ok + "\n" + R"({"bag_id":"b","label":2,"instances":[[1,2]]})").find("line 2"), std::string::npos);
  EXPECT_NE(message(ok + "\n" + R"({"bag_id":"b","label":1,"instances":[[1,2,3]]})").find("line 2"), std::string::npos);
  EXPECT_NE(message(R"({"bag_id":"b","label":1,"instances":[]})").find("line 1"), std::string::npos);
  EXPECT_NE(message("not json").find("line 1"), std::string::npos);
}

TEST(Jsonl, RoundTripKeepsSplits) {
  MilDataset ds = split(toy(5, 5), {}, 3);
  ds.bags[0].instances.push_back({0.1 + 0.2});
  std::stringstream io;
  write_jsonl(io, ds);
  EXPECT_EQ(read_jsonl(io, ds.name), ds);
}

TEST(Csv, GroupsRowsAndChecksLabels) {
  std::istringstream good("b1,1,0.5,1\nb1,1,0.25,2\nb1,1,0,3\nb2,0,1,1\n");
  const MilDataset ds = parse_csv(good, CsvSchema{}, "t");
  ASSERT_EQ(ds.bags.size(), 2u);
  EXPECT_EQ(ds.bags[0].size(), 3u);
  EXPECT_EQ(ds.bags[1].label, BagLabel::negative);

  std::istringstream bad("b1,1,0.5\nb1,-1,0.25\n");
  EXPECT_THROW(parse_csv(bad, CsvSchema{}, "t"), DataError);
}

TEST(Csv, HeaderAndSvmlight) {
  std::istringstream header("bag,label,f1\nx,1,2\n");
  EXPECT_EQ(parse_csv(header, CsvSchema{}, "t").bags.size(), 1u);
  std::istringstream svm("0:b1:1 1:0.5 3:2\n1:b1:1 2:1\n2:b2:-1 1:1\n");
  const MilDataset ds = parse_csv(svm, CsvSchema{CsvFormat::svmlight}, "s");
  EXPECT_EQ(ds.feature_dim, 3u);
  EXPECT_EQ(ds.bags[0].instances[0], (Instance{0.5, 0, 2}));
}

TEST(Csv, Musk1Counts) {
  const MilDataset ds = musk1();
  EXPECT_EQ(ds.bags.size(), 92u);
  EXPECT_EQ(ds.count(BagLabel::positive), 47u);
  EXPECT_EQ(ds.count(BagLabel::negative), 45u);
  EXPECT_EQ(ds.instance_count(), 476u);
  EXPECT_EQ(ds.feature_dim, 166u);
  std::stringstream io;
  write_jsonl(io, ds);
  EXPECT_EQ(read_jsonl(io, ds.name).bags.size(), 92u);
}

TEST(Split, StratifiedArithmetic) {
  const MilDataset ds = split(toy(10, 10), {0.7, 0.15, 0.15}, 1);
  const MilDataset train = ds.subset(Split::train);
  EXPECT_EQ(train.count(BagLabel::positive), 7u);
  EXPECT_EQ(train.count(BagLabel::negative), 7u);
  std::size_t total = 0;
  for (Split s : {Split::train, Split::val, Split::test}) total += ds.subset(s).bags.size();
  EXPECT_EQ(total, 20u);
  EXPECT_EQ(ds.split.size(), 20u);
}

TEST(Split, SeedDeterminism) {
  EXPECT_EQ(split(toy(10, 10), {}, 5).split, split(toy(10, 10), {}, 5).split);
  std::set<std::map<std::string, Split>> seen;
  for (std::uint64_t s = 0; s < 10; ++s) seen.insert(split(toy(10, 10), {}, s).split);
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Split, RejectsTinyClassesAndBadFractions) {
  EXPECT_THROW(split(toy(2, 10), {}, 1), ValueError);
  EXPECT_THROW(split(toy(10, 10), {0.5, 0.5, 0.5}, 1), ValueError);
  EXPECT_THROW(split(toy(10, 10), {1.0, 0.0, 0.0}, 1), ValueError);
}

TEST(Normalizer, Examples) {
  const std::vector<Instance> train{{0}, {2}};
  const Normalizer n = Normalizer::fit(train);
  EXPECT_EQ(n.apply(train[0]), Instance{-1});
  EXPECT_EQ(n.apply(train[1]), Instance{1});

  const Normalizer unit{{1.0}, {1.0}};
  EXPECT_EQ(unit.apply(Instance{4}), Instance{3});

  const std::vector<Instance> constant{{5, 1}, {5, 3}};
  const Normalizer c = Normalizer::fit(constant);
  EXPECT_EQ(c.apply(Instance{5, 2})[0], 0.0);
  EXPECT_EQ(c.apply(Instance{7, 2})[0], 0.0);
}

TEST(Normalizer, StandardizesTrainFeatures) {
  const MilDataset ds = split(musk1(), {}, 0);
  const MilDataset train = ds.subset(Split::train);
  const auto xs = all_instances(Normalizer::fit(train).apply(train));
  for (std::size_t j = 0; j < ds.feature_dim; ++j) {
    double m = 0, v = 0;
    for (const auto& x : xs) m += x[j];
    m /= double(xs.size());
    for (const auto& x : xs) v += (x[j] - m) * (x[j] - m);
    const double sd = std::sqrt(v / double(xs.size()));
    EXPECT_LT(std::fabs(m), 1e-9) << j;
    EXPECT_LT(std::fabs(sd - 1.0), 1e-6) << j;
  }
}
