#pragma once

// Test-only oracles shared by the unit and acceptance suites.

#include <algorithm>
#include <filesystem>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "vsamil/data.hpp"
#include "vsamil/diffnum.hpp"

namespace vsamil::oracle {

/// Central finite differences of `loss` with respect to every entry of every
/// parameter. `loss` must rebuild its graph from the current parameter values.
inline std::map<std::string, Tensor> numeric_gradients(const std::vector<Parameter*>& params,
                                                       const std::function<double()>& loss, double h = 1e-5) {
  std::map<std::string, Tensor> out;
  for (Parameter* p : params) {
    Tensor g(p->value.shape(), 0.0);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss();
      p->value[i] = keep - h;
      const double down = loss();
      p->value[i] = keep;
      g[i] = (up - down) / (2.0 * h);
    }
    out.emplace(p->name, std::move(g));
  }
  return out;
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double relative_error(const Tensor& a, const Tensor& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

/// Fraction of correctly ordered (positive, negative) pairs, ties counting 1/2.
inline double pair_count_auroc(const std::vector<double>& scores, const std::vector<int>& positive) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) good += 1.0;
      else if (scores[i] == scores[j]) good += 0.5;
    }
  }
  return good / pairs;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

#ifdef VSAMIL_DATA_DIR
/// One of the bundled benchmark CSVs (label in column 0, bag id in column 1).
inline MilDataset load_benchmark(const std::string& name) {
  CsvSchema s;
  s.bag_column = 1;
  s.label_column = 0;
  return convert_csv(std::filesystem::path(VSAMIL_DATA_DIR) / (name + ".csv"), s);
}
#endif

}  // namespace vsamil::oracle
