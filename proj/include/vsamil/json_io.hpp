#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vsamil/data.hpp"
#include "vsamil/diffnum.hpp"
#include "vsamil/error.hpp"

namespace vsamil {

using Json = nlohmann::json;

/// Nested arrays: number for rank 0, array for rank 1, array of rows for rank 2.
inline Json tensor_to_json(const Tensor& t) {
  if (t.rank() == 0) return t[0];
  if (t.rank() == 1) return std::vector<double>(t.values().begin(), t.values().end());
  Json rows = Json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) rows.push_back(std::vector<double>(t.row(r).begin(), t.row(r).end()));
  return rows;
}

inline Tensor tensor_from_json(const Json& j) {
  try {
    if (j.is_number()) return Tensor::scalar(j.get<double>());
    if (!j.is_array() || j.empty()) throw DataError("tensor must be a number or a non-empty array");
    if (j.front().is_number()) return Tensor::vector(j.get<std::vector<double>>());
    return Tensor::from_rows(j.get<std::vector<std::vector<double>>>());
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed tensor: ") + e.what());
  } catch (const ShapeError& e) {
    throw DataError(std::string("malformed tensor: ") + e.what());
  }
}

/// Reads `key` from `j`, turning any type/lookup failure into a DataError naming the key.
template <class T>
T json_field(const Json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw DataError("field '" + key + "': " + e.what());
  }
}

inline const Json& json_child(const Json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw DataError("missing field '" + key + "'");
  return j.at(key);
}

inline Json normalizer_to_json(const Normalizer& n) { return Json{{"mean", n.mean}, {"std", n.stddev}}; }

inline Normalizer normalizer_from_json(const Json& j) {
  Normalizer n{json_field<std::vector<double>>(j, "mean"), json_field<std::vector<double>>(j, "std")};
  if (n.mean.size() != n.stddev.size()) throw DataError("normalizer: mean/std length mismatch");
  return n;
}

}  // namespace vsamil
