#pragma once

// Flat JSON parameter dumps: every matrix is {"rows", "cols", "data"} with
// data in row-major order.

#include "catenets/core.hpp"
#include "catenets/diffcore/dense.hpp"

#include <json.hpp>

#include <string>

namespace catenets::io {

using json = nlohmann::json;

inline json to_json(const Matrix& m) {
  json data = json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols)
    throw InputError("matrix dump: header " + std::to_string(rows) + "x" + std::to_string(cols) + " but " +
                     std::to_string(data.size()) + " values");
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
  return m;
}

inline json to_json(const diff::DenseLayer& layer) {
  return {{"activation", diff::to_string(layer.activation)},
          {"weights", to_json(layer.weights)},
          {"biases", to_json(layer.biases)}};
}

inline diff::DenseLayer layer_from_json(const json& j) {
  return {matrix_from_json(j.at("weights")), matrix_from_json(j.at("biases")),
          diff::activation_from_string(j.at("activation").get<std::string>())};
}

inline json to_json(const diff::Stack& s) {
  json out = json::array();
  for (const auto& l : s) out.push_back(to_json(l));
  return out;
}

inline diff::Stack stack_from_json(const json& j) {
  diff::Stack s;
  for (const auto& l : j) s.push_back(layer_from_json(l));
  return s;
}

}  // namespace catenets::io
