#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "car/training.hpp"

namespace car {

/// Flat `key=value` file. '#' starts a comment line; whitespace around keys
/// and values is trimmed. Later duplicates win.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in);
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Overlays recognised training keys (batch, lr, d, n, patience, max-epochs,
/// seed, beta1, beta2, epsilon, user-embedding, variant, threads) on `base`.
/// Throws std::invalid_argument on unknown keys or unparsable values.
TrainConfig apply_train_config(const KeyValueConfig& kv, TrainConfig base);

}  // namespace car
