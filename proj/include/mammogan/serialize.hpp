#pragma once

// JSON mapping of the configuration structs. Readers are strict: unknown keys
// and wrongly typed values raise DataError naming the offending key. Missing
// keys keep their defaults.

#include <json.hpp>
#include <optional>
#include <set>
#include <string>

#include "mammogan/errors.hpp"
#include "mammogan/networks.hpp"
#include "mammogan/phantom.hpp"

namespace mammogan {

using json = nlohmann::json;

class StrictReader {
 public:
  StrictReader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw DataError(context_ + ": expected a JSON object");
  }

  template <typename T>
  StrictReader& opt(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return *this;
    try {
      if constexpr (is_optional<T>::value) {
        out = it->template get<typename T::value_type>();
      } else {
        out = it->template get<T>();
      }
    } catch (const json::exception& e) {
      throw DataError(context_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  const json* sub(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  // Throws on keys that were never asked for.
  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw DataError(context_ + ": unknown key '" + k + "'");
  }

 private:
  template <typename U>
  struct is_optional : std::false_type {};
  template <typename U>
  struct is_optional<std::optional<U>> : std::true_type {};

  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

json to_json(const PhantomSpec& s);
PhantomSpec phantom_spec_from_json(const json& j);

json to_json(const nn::GeneratorSpec& s);
nn::GeneratorSpec generator_spec_from_json(const json& j);
json to_json(const nn::DiscriminatorSpec& s);
nn::DiscriminatorSpec discriminator_spec_from_json(const json& j);

// Deterministic text form (sorted keys, fixed indentation) for hashing and files.
std::string canonical_dump(const json& j);

}  // namespace mammogan
