#pragma once

// Strict reading of JSON objects into config structs: every key must be
// consumed, missing keys keep their defaults.

#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace qmri {

class JsonFields {
 public:
  JsonFields(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw std::invalid_argument(context_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(context_ + "." + key + ": " + e.what());
    }
  }

  // Sub-object, or an empty object when absent.
  nlohmann::json child(const std::string& key) {
    if (!j_.contains(key)) return nlohmann::json::object();
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw std::invalid_argument(context_ + ": unknown key \"" + key + "\"");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace qmri
