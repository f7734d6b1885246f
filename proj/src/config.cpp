#include "car/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "car/corpus.hpp"

namespace car {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument(fmt::format("config key '{}': bad value '{}'", key, text));
  }
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument(fmt::format("config key '{}': bad value '{}'", key, text));
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw std::invalid_argument(fmt::format("config key '{}': bad boolean '{}'", key, text));
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in) {
  KeyValueConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key=value");
    auto key = trim(t.substr(0, eq));
    if (key.empty()) throw ParseError(lineno, "empty key");
    cfg.values_[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open config '{}'", path));
  return parse(in);
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

TrainConfig apply_train_config(const KeyValueConfig& kv, TrainConfig c) {
  for (const auto& [key, value] : kv.values()) {
    if (key == "batch") c.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "lr") c.learning_rate = parse_real(key, value);
    else if (key == "d") c.dim = parse_number<std::size_t>(key, value);
    else if (key == "n") c.max_len = parse_number<std::size_t>(key, value);
    else if (key == "patience") c.patience = parse_number<std::size_t>(key, value);
    else if (key == "max-epochs") c.max_epochs = parse_number<std::size_t>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "beta1") c.beta1 = parse_real(key, value);
    else if (key == "beta2") c.beta2 = parse_real(key, value);
    else if (key == "epsilon") c.epsilon = parse_real(key, value);
    else if (key == "user-embedding") c.use_user_embedding = parse_bool(key, value);
    else if (key == "variant") c.variant = parse_variant(value);
    else if (key == "threads") c.threads = parse_number<std::size_t>(key, value);
    else if (key == "log-timing") c.log_timing = parse_bool(key, value);
    else if (key == "negatives" || key == "k") continue;  // evaluation keys
    else throw std::invalid_argument(fmt::format("unknown config key '{}'", key));
  }
  return c;
}

}  // namespace car
