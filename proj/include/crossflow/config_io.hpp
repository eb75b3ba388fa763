#pragma once
// ScenarioConfig <-> JSON. Keys mirror the struct field names; missing keys
// keep their defaults, unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "crossflow/domain.hpp"

namespace crossflow {

class ConfigParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j,
                           std::initializer_list<std::string_view> known,
                           std::string_view where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok)
      throw ConfigParseError("unknown key '" + key + "' in " +
                             std::string(where));
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

inline Intention parse_intention(const nlohmann::json& j) {
  if (j.is_number_integer()) {
    int v = j.get<int>();
    if (v < 0 || v > 2) throw ConfigParseError("intention out of range");
    return static_cast<Intention>(v);
  }
  auto s = j.get<std::string>();
  if (s == "right") return Intention::Right;
  if (s == "straight") return Intention::Straight;
  if (s == "left") return Intention::Left;
  throw ConfigParseError("unknown intention '" + s + "'");
}

}  // namespace detail

inline nlohmann::json to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["inflow_per_arm"] = c.inflow_per_arm;
  j["intention_split"] = c.intention_split;
  j["duration"] = c.duration;
  j["dt"] = c.dt;
  j["lambda"] = c.lambda;
  j["c_const"] = c.c_const ? nlohmann::json(*c.c_const) : nlohmann::json(nullptr);
  j["beta_wait"] = c.beta_wait;
  j["seed"] = c.seed;
  j["controller"] = std::string(to_string(c.controller));
  j["vehicle_template"] = {{"length", c.vehicle_template.length},
                           {"a_max", c.vehicle_template.a_max},
                           {"a_min", c.vehicle_template.a_min}};
  const auto& is = c.intersection;
  nlohmann::json lanes = nlohmann::json::array();
  for (auto i : is.lane_intentions) lanes.push_back(std::string(to_string(i)));
  j["intersection"] = {
      {"control_zone_length", is.control_zone_length},
      {"speed_limit", is.speed_limit},
      {"lanes_per_arm", is.lanes_per_arm},
      {"lane_intentions", lanes},
      {"msr", is.msr},
      {"msl", is.msl},
      {"turn_path_length",
       {{"right", is.turn_path_length.right},
        {"straight", is.turn_path_length.straight},
        {"left", is.turn_path_length.left}}}};
  j["traffic_light"] = {{"green", c.traffic_light.green},
                        {"clearance", c.traffic_light.clearance}};
  return j;
}

inline ScenarioConfig config_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  ScenarioConfig c;
  try {
    detail::reject_unknown(
        j,
        {"inflow_per_arm", "intention_split", "duration", "dt", "lambda",
         "c_const", "beta_wait", "seed", "controller", "vehicle_template",
         "intersection", "traffic_light"},
        "config");
    read_opt(j, "inflow_per_arm", c.inflow_per_arm);
    read_opt(j, "intention_split", c.intention_split);
    read_opt(j, "duration", c.duration);
    read_opt(j, "dt", c.dt);
    read_opt(j, "lambda", c.lambda);
    if (auto it = j.find("c_const"); it != j.end() && !it->is_null())
      c.c_const = it->get<double>();
    read_opt(j, "beta_wait", c.beta_wait);
    read_opt(j, "seed", c.seed);
    if (auto it = j.find("controller"); it != j.end()) {
      auto kind = parse_controller(it->get<std::string>());
      if (!kind)
        throw ConfigParseError("unknown controller '" +
                               it->get<std::string>() + "'");
      c.controller = *kind;
    }
    if (auto it = j.find("vehicle_template"); it != j.end()) {
      detail::reject_unknown(*it, {"length", "a_max", "a_min"},
                             "vehicle_template");
      read_opt(*it, "length", c.vehicle_template.length);
      read_opt(*it, "a_max", c.vehicle_template.a_max);
      read_opt(*it, "a_min", c.vehicle_template.a_min);
    }
    if (auto it = j.find("intersection"); it != j.end()) {
      const auto& s = *it;
      detail::reject_unknown(
          s,
          {"control_zone_length", "speed_limit", "lanes_per_arm",
           "lane_intentions", "msr", "msl", "turn_path_length"},
          "intersection");
      auto& is = c.intersection;
      read_opt(s, "control_zone_length", is.control_zone_length);
      read_opt(s, "speed_limit", is.speed_limit);
      read_opt(s, "lanes_per_arm", is.lanes_per_arm);
      if (auto li = s.find("lane_intentions"); li != s.end()) {
        is.lane_intentions.clear();
        for (const auto& e : *li)
          is.lane_intentions.push_back(detail::parse_intention(e));
      }
      read_opt(s, "msr", is.msr);
      read_opt(s, "msl", is.msl);
      if (auto tp = s.find("turn_path_length"); tp != s.end()) {
        detail::reject_unknown(*tp, {"right", "straight", "left"},
                               "turn_path_length");
        read_opt(*tp, "right", is.turn_path_length.right);
        read_opt(*tp, "straight", is.turn_path_length.straight);
        read_opt(*tp, "left", is.turn_path_length.left);
      }
    }
    if (auto it = j.find("traffic_light"); it != j.end()) {
      detail::reject_unknown(*it, {"green", "clearance"}, "traffic_light");
      read_opt(*it, "green", c.traffic_light.green);
      read_opt(*it, "clearance", c.traffic_light.clearance);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigParseError(e.what());
  }
  return c;
}

inline std::string dump_config(const ScenarioConfig& c) {
  return to_json(c).dump(2) + "\n";
}

inline ScenarioConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigParseError(e.what());
  }
  return config_from_json(j);
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigParseError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// FNV-1a over the canonical (compact) JSON form.
inline std::uint64_t config_hash(const ScenarioConfig& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace crossflow
