#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace test_support {

/// Reference values produced by tests/oracles/derive.py.
inline const nlohmann::json& oracle() {
  static const nlohmann::json j = [] {
    std::ifstream in(LW_ORACLE_FILE);
    if (!in) throw std::runtime_error("missing oracle file " LW_ORACLE_FILE);
    return nlohmann::json::parse(in);
  }();
  return j;
}

inline double ref(const char* key) { return oracle().at(key).get<double>(); }

inline std::string scenario_path(const std::string& name) {
  return std::string(LW_SCENARIO_DIR) + "/" + name;
}

}  // namespace test_support
