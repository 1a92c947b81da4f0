#pragma once

// JSON experiment configs, read as flat dotted keys: {"schedule": {"rate": 1e-4}}
// and {"schedule.rate": 1e-4} are the same entry.

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualadam/common.hpp"
#include "dualadam/optim.hpp"

namespace dualadam {

using Json = nlohmann::json;

inline void flatten_into(const Json& j, const std::string& prefix, std::map<std::string, Json>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten_into(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out[prefix] = j;
  }
}

class Config {
public:
  Config() = default;
  explicit Config(const Json& j) {
    require(j.is_object() || j.is_null(), "config root must be a JSON object");
    if (j.is_object()) flatten_into(j, "", values_);
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path);
    try {
      return Config(Json::parse(in, nullptr, true, true));
    } catch (const Json::exception& e) {
      throw Error(path + ": " + e.what());
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  template <class T>
  T get(const std::string& key, const T& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return it->second.get<T>();
    } catch (const Json::exception&) {
      throw Error("config key '" + key + "' has the wrong type: " + it->second.dump());
    }
  }

  void set(const std::string& key, Json value) { values_[key] = std::move(value); }

  /// Rejects keys outside `allowed`. A trailing ".*" in an allowed entry
  /// admits any key with that prefix.
  void validate_keys(const std::vector<std::string>& allowed) const {
    for (const auto& [key, _] : values_) {
      bool ok = false;
      for (const auto& a : allowed) {
        if (a == key) ok = true;
        if (a.size() > 2 && a.ends_with(".*") && key.starts_with(a.substr(0, a.size() - 1))) ok = true;
      }
      if (!ok) {
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        throw Error("invalid config key '" + key + "'; valid keys: " + list);
      }
    }
  }

  Json to_json() const {
    Json j = Json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  const std::map<std::string, Json>& values() const { return values_; }

private:
  std::map<std::string, Json> values_;
};

inline const std::vector<std::string>& optimizer_keys() {
  static const std::vector<std::string> keys{
      "lr", "beta1", "beta2", "eps", "weight_decay", "schedule.kind", "schedule.rate",
      "schedule.base", "schedule.switch_epoch", "schedule.fixed_alpha"};
  return keys;
}

/// Valid keys for a subcommand: its own keys, the optimizer keys, and
/// per-optimizer overrides such as "invadam.lr".
inline std::vector<std::string> with_optimizer_keys(std::vector<std::string> own) {
  own.push_back("optimizer");
  own.push_back("seed");
  own.push_back("seeds");
  for (const auto& k : optimizer_keys()) {
    own.push_back(k);
    for (const char* name : {"adam", "adamw", "invadam", "dualadam"})
      own.push_back(std::string(name) + "." + k);
  }
  return own;
}

/// Optimizer names from "optimizer" (a string or a list).
inline std::vector<OptimizerKind> optimizer_list(const Config& c,
                                                 const std::vector<std::string>& fallback) {
  std::vector<std::string> names = fallback;
  if (c.has("optimizer")) {
    const Json j = c.get<Json>("optimizer", Json());
    if (j.is_string())
      names = {j.get<std::string>()};
    else if (j.is_array())
      names = j.get<std::vector<std::string>>();
    else
      throw Error("config key 'optimizer' must be a string or a list of strings");
  }
  require(!names.empty(), "config lists no optimizer");
  std::vector<OptimizerKind> out;
  for (const auto& n : names) out.push_back(parse_optimizer(n));
  return out;
}

/// Resolves an OptimizerConfig: `defaults`, then shared keys, then
/// "<optimizer>.<key>" overrides.
inline OptimizerConfig optimizer_config(const Config& c, OptimizerKind kind,
                                        OptimizerConfig defaults = {}) {
  OptimizerConfig o = defaults;
  o.kind = kind;
  const std::string own = to_string(kind) + ".";
  auto pick = [&](const std::string& key, auto fallback) {
    return c.get(own + key, c.get(key, fallback));
  };
  o.learning_rate = pick("lr", o.learning_rate);
  o.beta1 = pick("beta1", o.beta1);
  o.beta2 = pick("beta2", o.beta2);
  o.epsilon = pick("eps", o.epsilon);
  o.weight_decay = kind == OptimizerKind::AdamW ? pick("weight_decay", o.weight_decay) : 0.0;
  o.schedule.kind = parse_schedule(pick("schedule.kind", to_string(o.schedule.kind)));
  o.schedule.rate = pick("schedule.rate", o.schedule.rate);
  o.schedule.base = pick("schedule.base", o.schedule.base);
  o.schedule.switch_epoch = pick("schedule.switch_epoch", o.schedule.switch_epoch);
  o.schedule.fixed_alpha = pick("schedule.fixed_alpha", o.schedule.fixed_alpha);
  o.validate();
  return o;
}

inline Json to_json(const OptimizerConfig& o) {
  return {{"optimizer", to_string(o.kind)},
          {"lr", o.learning_rate},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.epsilon},
          {"weight_decay", o.weight_decay},
          {"schedule.kind", to_string(o.schedule.kind)},
          {"schedule.rate", o.schedule.rate},
          {"schedule.base", o.schedule.base},
          {"schedule.switch_epoch", o.schedule.switch_epoch},
          {"schedule.fixed_alpha", o.schedule.fixed_alpha}};
}

/// Parses "a..b" (inclusive) or a single integer.
inline std::vector<std::uint64_t> parse_seed_range(const std::string& s) {
  const auto dots = s.find("..");
  try {
    if (dots == std::string::npos) return {std::stoull(s)};
    const auto a = std::stoull(s.substr(0, dots));
    const auto b = std::stoull(s.substr(dots + 2));
    require(a <= b, "seed range '" + s + "' is empty");
    std::vector<std::uint64_t> out;
    for (auto i = a; i <= b; ++i) out.push_back(i);
    return out;
  } catch (const std::logic_error&) {
    throw Error("malformed seed range '" + s + "'; expected a..b or an integer");
  }
}

/// Seeds from "seeds" ("a..b" or a list), else the single "seed".
inline std::vector<std::uint64_t> config_seeds(const Config& c, std::uint64_t fallback = 0) {
  if (c.has("seeds")) {
    const Json j = c.get<Json>("seeds", Json());
    if (j.is_string()) return parse_seed_range(j.get<std::string>());
    if (j.is_array()) return j.get<std::vector<std::uint64_t>>();
    throw Error("config key 'seeds' must be \"a..b\" or a list of integers");
  }
  return {c.get<std::uint64_t>("seed", fallback)};
}

}  // namespace dualadam
