#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "vsamil/error.hpp"

namespace vsamil {

using Instance = std::vector<double>;

enum class BagLabel : int { negative = -1, positive = 1 };

inline int to_int(BagLabel l) noexcept { return static_cast<int>(l); }
/// Labels are {-1, +1} everywhere except at the loss, which wants {0, 1}.
inline double bce_target(BagLabel l) noexcept { return l == BagLabel::positive ? 1.0 : 0.0; }

struct Bag {
  std::string id;
  BagLabel label = BagLabel::negative;
  std::vector<Instance> instances;

  std::size_t size() const noexcept { return instances.size(); }
  friend bool operator==(const Bag&, const Bag&) = default;
};

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValueError("unknown split '" + std::string(s) + "' (expected train, val or test)");
}

struct MilDataset {
  std::string name;
  std::size_t feature_dim = 0;
  std::vector<Bag> bags;
  /// bag id -> split; empty until split() has run.
  std::map<std::string, Split> split;

  /// Bags assigned to `s`, in dataset order.
  MilDataset subset(Split s) const {
    MilDataset out{name + ":" + to_string(s), feature_dim, {}, {}};
    for (const auto& b : bags) {
      auto it = split.find(b.id);
      if (it != split.end() && it->second == s) {
        out.bags.push_back(b);
        out.split.emplace(b.id, s);
      }
    }
    return out;
  }

  std::size_t count(BagLabel l) const {
    return static_cast<std::size_t>(
        std::count_if(bags.begin(), bags.end(), [l](const Bag& b) { return b.label == l; }));
  }

  std::size_t instance_count() const {
    std::size_t n = 0;
    for (const auto& b : bags) n += b.size();
    return n;
  }

  std::vector<BagLabel> labels() const {
    std::vector<BagLabel> out;
    out.reserve(bags.size());
    for (const auto& b : bags) out.push_back(b.label);
    return out;
  }

  friend bool operator==(const MilDataset&, const MilDataset&) = default;
};

/// All instances of all bags, flattened in order.
inline std::vector<Instance> all_instances(const MilDataset& ds) {
  std::vector<Instance> out;
  out.reserve(ds.instance_count());
  for (const auto& b : ds.bags) out.insert(out.end(), b.instances.begin(), b.instances.end());
  return out;
}

namespace detail {

inline std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

inline BagLabel parse_label(double v, std::size_t line, bool allow_zero) {
  if (v == 1.0) return BagLabel::positive;
  if (v == -1.0 || (allow_zero && v == 0.0)) return BagLabel::negative;
  std::ostringstream os;
  os << at_line(line) << "label " << v << " outside {-1, 1}";
  throw DataError(os.str());
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return std::string(s);
}

inline std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

// Groups (bag id, label, instance) rows into bags in first-appearance order.
class BagAssembler {
 public:
  void add(const std::string& id, BagLabel label, Instance x, std::size_t line) {
    if (dim_ == 0) dim_ = x.size();
    if (x.size() != dim_) {
      throw DataError(at_line(line) + "instance has " + std::to_string(x.size()) + " features, expected " +
                      std::to_string(dim_));
    }
    for (double v : x) {
      if (!std::isfinite(v)) throw DataError(at_line(line) + "non-finite feature value");
    }
    auto [it, inserted] = index_.try_emplace(id, bags_.size());
    if (inserted) {
      bags_.push_back(Bag{id, label, {}});
    } else if (bags_[it->second].label != label) {
      throw DataError(at_line(line) + "bag '" + id + "' has inconsistent labels");
    }
    bags_[it->second].instances.push_back(std::move(x));
  }

  MilDataset finish(std::string name) && {
    if (bags_.empty()) throw DataError("no bags found");
    return MilDataset{std::move(name), dim_, std::move(bags_), {}};
  }

  std::size_t dim() const noexcept { return dim_; }

 private:
  std::size_t dim_ = 0;
  std::vector<Bag> bags_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// JSONL: one {"bag_id", "label", "instances", ["split"]} record per line.

inline MilDataset read_jsonl(std::istream& in, std::string name) {
  MilDataset ds;
  ds.name = std::move(name);
  std::string line;
  std::size_t lineno = 0;
  std::unordered_map<std::string, bool> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(detail::at_line(lineno) + "invalid JSON: " + e.what());
    }
    try {
      Bag bag;
      bag.id = rec.at("bag_id").is_string() ? rec.at("bag_id").get<std::string>() : rec.at("bag_id").dump();
      const auto& lab = rec.at("label");
      if (!lab.is_number()) throw DataError(detail::at_line(lineno) + "label is not a number");
      bag.label = detail::parse_label(lab.get<double>(), lineno, false);
      for (const auto& inst : rec.at("instances")) bag.instances.push_back(inst.get<Instance>());
      if (bag.instances.empty()) throw DataError(detail::at_line(lineno) + "bag '" + bag.id + "' is empty");
      for (const auto& x : bag.instances) {
        if (ds.feature_dim == 0) ds.feature_dim = x.size();
        if (x.size() != ds.feature_dim || x.empty()) {
          throw DataError(detail::at_line(lineno) + "instance has " + std::to_string(x.size()) +
                          " features, expected " + std::to_string(ds.feature_dim));
        }
      }
      if (!seen.emplace(bag.id, true).second) throw DataError(detail::at_line(lineno) + "duplicate bag id '" + bag.id + "'");
      if (rec.contains("split")) ds.split.emplace(bag.id, split_from_string(rec.at("split").get<std::string>()));
      ds.bags.push_back(std::move(bag));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(detail::at_line(lineno) + "malformed record: " + e.what());
    } catch (const ValueError& e) {
      throw DataError(detail::at_line(lineno) + e.what());
    }
  }
  if (ds.bags.empty()) throw DataError("no bags found");
  return ds;
}

inline MilDataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return read_jsonl(in, path.stem().string());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_jsonl(std::ostream& out, const MilDataset& ds) {
  for (const auto& b : ds.bags) {
    nlohmann::json rec;
    rec["bag_id"] = b.id;
    rec["label"] = to_int(b.label);
    rec["instances"] = b.instances;
    if (auto it = ds.split.find(b.id); it != ds.split.end()) rec["split"] = to_string(it->second);
    out << rec.dump() << '\n';
  }
}

inline void save_jsonl(const MilDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_jsonl(out, ds);
}

// ---------------------------------------------------------------------------
// CSV / svmlight converters

enum class CsvFormat { csv, svmlight };

struct CsvSchema {
  CsvFormat format = CsvFormat::csv;
  std::size_t bag_column = 0;
  std::size_t label_column = 1;
};

/// csv: one instance per row; every column other than the bag and label
/// columns is a feature, in order. A non-numeric label on the first row is
/// treated as a header. Labels may be {-1, 1} or {0, 1}.
///
/// svmlight: `instance:bag:label idx:value ...` with 1-based sparse indices;
/// the feature dimension is the largest index seen.
inline MilDataset parse_csv(std::istream& in, const CsvSchema& schema, std::string name) {
  detail::BagAssembler bags;
  std::string line;
  std::size_t lineno = 0;

  if (schema.format == CsvFormat::csv) {
    if (schema.bag_column == schema.label_column) throw ValueError("bag and label columns must differ");
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::blank(line)) continue;
      const auto cols = detail::split_on(line, ',');
      if (cols.size() <= std::max(schema.bag_column, schema.label_column) || cols.size() < 3) {
        throw DataError(detail::at_line(lineno) + "expected bag, label and at least one feature column");
      }
      double label = 0.0;
      if (!detail::parse_double(cols[schema.label_column], label)) {
        if (lineno == 1) continue;  // header
        throw DataError(detail::at_line(lineno) + "non-numeric label '" + std::string(cols[schema.label_column]) + "'");
      }
      Instance x;
      x.reserve(cols.size() - 2);
      for (std::size_t c = 0; c < cols.size(); ++c) {
        if (c == schema.bag_column || c == schema.label_column) continue;
        double v = 0.0;
        if (!detail::parse_double(cols[c], v)) {
          throw DataError(detail::at_line(lineno) + "non-numeric feature in column " + std::to_string(c));
        }
        x.push_back(v);
      }
      bags.add(detail::trim(cols[schema.bag_column]), detail::parse_label(label, lineno, true), std::move(x), lineno);
    }
    return std::move(bags).finish(std::move(name));
  }

  struct Row {
    std::string bag;
    BagLabel label;
    std::vector<std::pair<std::size_t, double>> values;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    std::istringstream tokens(line);
    std::string head;
    tokens >> head;
    const auto parts = detail::split_on(head, ':');
    double label = 0.0;
    if (parts.size() != 3 || !detail::parse_double(parts[2], label)) {
      throw DataError(detail::at_line(lineno) + "expected 'instance:bag:label', got '" + head + "'");
    }
    Row r{std::string(parts[1]), detail::parse_label(label, lineno, true), {}, lineno};
    std::string tok;
    while (tokens >> tok) {
      const auto kv = detail::split_on(tok, ':');
      double idx = 0.0, v = 0.0;
      if (kv.size() != 2 || !detail::parse_double(kv[0], idx) || !detail::parse_double(kv[1], v) || idx < 1 ||
          idx != std::floor(idx)) {
        throw DataError(detail::at_line(lineno) + "malformed feature '" + tok + "'");
      }
      const auto i = static_cast<std::size_t>(idx);
      dim = std::max(dim, i);
      r.values.emplace_back(i - 1, v);
    }
    rows.push_back(std::move(r));
  }
  if (dim == 0) throw DataError("no features found");
  for (auto& r : rows) {
    Instance x(dim, 0.0);
    for (auto [i, v] : r.values) x[i] = v;
    bags.add(r.bag, r.label, std::move(x), r.line);
  }
  return std::move(bags).finish(std::move(name));
}

inline MilDataset convert_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_csv(in, schema, path.stem().string());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Splits

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

namespace detail {

// Largest-remainder apportionment of n items, every part at least one.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& f) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = f[i] * static_cast<double>(n);
    out[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(out[i]);
    used += out[i];
  }
  while (used < n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++out[best];
    rem[best] = -1.0;
    ++used;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (out[i] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(out.begin(), out.end()) - out.begin());
      --out[donor];
      ++out[i];
    }
  }
  return out;
}

}  // namespace detail

/// Stratified train/val/test assignment; deterministic given `seed`.
inline MilDataset split(MilDataset ds, const SplitFractions& fr, std::uint64_t seed) {
  const std::array<double, 3> f{fr.train, fr.val, fr.test};
  for (double v : f) {
    if (!(v > 0)) throw ValueError("split: every fraction must be > 0");
  }
  if (std::fabs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ValueError("split: fractions must sum to 1");

  std::mt19937_64 rng(seed);
  ds.split.clear();
  for (BagLabel cls : {BagLabel::negative, BagLabel::positive}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.bags.size(); ++i)
      if (ds.bags[i].label == cls) idx.push_back(i);
    if (idx.size() < 3) {
      throw ValueError("split: class " + std::to_string(to_int(cls)) + " has " + std::to_string(idx.size()) +
                       " bags, fewer than the 3 splits");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto counts = detail::apportion(idx.size(), f);
    std::size_t k = 0;
    for (std::size_t part = 0; part < 3; ++part) {
      for (std::size_t c = 0; c < counts[part]; ++c) ds.split[ds.bags[idx[k++]].id] = static_cast<Split>(part);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Feature standardization

inline constexpr double kStdFloor = 1e-8;

/// Per-feature standardization; features whose train std is below the floor
/// map to 0 everywhere.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Normalizer fit(std::span<const Instance> train) {
    if (train.empty()) throw ValueError("normalizer: no training instances");
    const std::size_t p = train.front().size();
    Normalizer n{std::vector<double>(p, 0.0), std::vector<double>(p, 0.0)};
    for (const auto& x : train)
      for (std::size_t j = 0; j < p; ++j) n.mean[j] += x[j];
    for (auto& m : n.mean) m /= static_cast<double>(train.size());
    for (const auto& x : train)
      for (std::size_t j = 0; j < p; ++j) n.stddev[j] += (x[j] - n.mean[j]) * (x[j] - n.mean[j]);
    for (auto& s : n.stddev) s = std::sqrt(s / static_cast<double>(train.size()));
    return n;
  }

  static Normalizer fit(const MilDataset& train) { return fit(all_instances(train)); }

  std::size_t dim() const noexcept { return mean.size(); }

  Instance apply(std::span<const double> x) const {
    if (x.size() != mean.size()) {
      throw ShapeError("normalizer: instance has " + std::to_string(x.size()) + " features, expected " +
                       std::to_string(mean.size()));
    }
    Instance out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j)
      out[j] = stddev[j] < kStdFloor ? 0.0 : (x[j] - mean[j]) / stddev[j];
    return out;
  }

  Bag apply(const Bag& b) const {
    Bag out{b.id, b.label, {}};
    out.instances.reserve(b.size());
    for (const auto& x : b.instances) out.instances.push_back(apply(x));
    return out;
  }

  MilDataset apply(const MilDataset& ds) const {
    MilDataset out{ds.name, ds.feature_dim, {}, ds.split};
    out.bags.reserve(ds.bags.size());
    for (const auto& b : ds.bags) out.bags.push_back(apply(b));
    return out;
  }

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

}  // namespace vsamil
