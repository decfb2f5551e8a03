#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ant/errors.hpp"
#include "ant/mvn.hpp"

namespace ant::json_util {

inline nlohmann::json vector(const Vector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline nlohmann::json matrix(const Matrix& m) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(std::move(row));
  }
  return a;
}

inline Vector to_vector(const nlohmann::json& a) {
  if (!a.is_array()) throw ConfigError("expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw ConfigError("expected a number");
    v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  }
  return v;
}

inline Matrix to_matrix(const nlohmann::json& a) {
  if (!a.is_array()) throw ConfigError("expected a nested array");
  if (a.empty()) return Matrix(0, 0);
  const auto cols = a[0].is_array() ? a[0].size() : 0;
  Matrix m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_array() || a[i].size() != cols) throw ConfigError("ragged matrix");
    for (std::size_t j = 0; j < cols; ++j) {
      if (!a[i][j].is_number()) throw ConfigError("expected a number");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j].get<double>();
    }
  }
  return m;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json parse_file(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

}  // namespace ant::json_util
