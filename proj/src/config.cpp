#include "relclust/config.hpp"

#include <functional>
#include <map>

namespace relclust {

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid configuration:";
  for (const auto& p : problems) out += "\n  " + p;
  return out;
}

template <typename T>
void read_into(const nlohmann::json& value, T& field) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!value.is_boolean()) throw std::invalid_argument("expected a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!value.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
  } else {
    if (!value.is_number()) throw std::invalid_argument("expected a number");
  }
  field = value.get<T>();
}

template <typename T>
void read_optional(const nlohmann::json& value, std::optional<T>& field) {
  if (value.is_null()) {
    field.reset();
    return;
  }
  T v{};
  read_into(value, v);
  field = v;
}

using Setter = std::function<void(RunConfig&, const nlohmann::json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"span_count", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.span_count); }},
      {"layers", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.layers); }},
      {"temperature", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.temperature); }},
      {"momentum", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.momentum); }},
      {"queue_size", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.queue_size); }},
      {"damping", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.damping); }},
      {"ap_max_iter", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.ap_max_iter); }},
      {"ap_stable_window",
       [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.ap_stable_window); }},
      {"epochs", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.epochs); }},
      {"learning_rate", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.learning_rate); }},
      {"weight_decay", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.weight_decay); }},
      {"batch_size", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.batch_size); }},
      {"model_dim", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.dims.model_dim); }},
      {"ff_dim", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.dims.ff_dim); }},
      {"vocab_size", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.dims.vocab_size); }},
      {"max_len", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.dims.max_len); }},
      {"seed", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.seed); }},
      {"disable_exem_nce",
       [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.disable_exem_nce); }},
      {"use_kmeans", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.use_kmeans); }},
      {"disable_cha", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.disable_cha); }},
      {"cha_sharpness",
       [](RunConfig& c, const nlohmann::json& v) { read_optional(v, c.cha_sharpness); }},
      {"cha_mix", [](RunConfig& c, const nlohmann::json& v) { read_into(v, c.cha_mix); }},
      {"target_cluster_count",
       [](RunConfig& c, const nlohmann::json& v) { read_optional(v, c.target_cluster_count); }},
  };
  return table;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument(join_problems(problems)), problems_(std::move(problems)) {}

std::vector<std::string> config_problems(const RunConfig& c) {
  std::vector<std::string> p;
  if (c.span_count < 1) p.push_back("span_count must be at least 1");
  if (c.layers < 2) p.push_back("layers must be at least 2");
  if (!(c.temperature > 0.0)) p.push_back("temperature must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) p.push_back("momentum must lie in [0, 1)");
  if (c.queue_size < 2) p.push_back("queue_size must be at least 2");
  if (!(c.damping >= 0.0 && c.damping < 1.0)) p.push_back("damping must lie in [0, 1)");
  if (c.ap_max_iter < 1) p.push_back("ap_max_iter must be at least 1");
  if (c.ap_stable_window < 1) p.push_back("ap_stable_window must be at least 1");
  if (!(c.learning_rate > 0.0)) p.push_back("learning_rate must be positive");
  if (!(c.weight_decay >= 0.0)) p.push_back("weight_decay must be non-negative");
  if (c.batch_size < 1) p.push_back("batch_size must be at least 1");
  if (c.dims.model_dim < 1) p.push_back("model_dim must be at least 1");
  if (c.dims.ff_dim < 1) p.push_back("ff_dim must be at least 1");
  if (c.dims.vocab_size <= Vocabulary::kReserved) {
    p.push_back("vocab_size must exceed the " + std::to_string(Vocabulary::kReserved) +
                " reserved ids");
  }
  if (c.dims.max_len < 4 + c.span_count) p.push_back("max_len is too small for the markers and spans");
  if (c.cha_sharpness && !(*c.cha_sharpness > 0.0)) p.push_back("cha_sharpness must be positive");
  if (!(c.cha_mix >= 0.0)) p.push_back("cha_mix must be non-negative");
  if (c.target_cluster_count && *c.target_cluster_count < 1) {
    p.push_back("target_cluster_count must be at least 1");
  }
  return p;
}

void validate_config(const RunConfig& config) {
  auto problems = config_problems(config);
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["span_count"] = c.span_count;
  j["layers"] = c.layers;
  j["temperature"] = c.temperature;
  j["momentum"] = c.momentum;
  j["queue_size"] = c.queue_size;
  j["damping"] = c.damping;
  j["ap_max_iter"] = c.ap_max_iter;
  j["ap_stable_window"] = c.ap_stable_window;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["model_dim"] = c.dims.model_dim;
  j["ff_dim"] = c.dims.ff_dim;
  j["vocab_size"] = c.dims.vocab_size;
  j["max_len"] = c.dims.max_len;
  j["seed"] = c.seed;
  j["disable_exem_nce"] = c.disable_exem_nce;
  j["use_kmeans"] = c.use_kmeans;
  j["disable_cha"] = c.disable_cha;
  j["cha_sharpness"] = c.cha_sharpness ? nlohmann::ordered_json(*c.cha_sharpness) : nullptr;
  j["cha_mix"] = c.cha_mix;
  j["target_cluster_count"] =
      c.target_cluster_count ? nlohmann::ordered_json(*c.target_cluster_count) : nullptr;
  return j;
}

RunConfig config_from_json(const nlohmann::json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError({"configuration must be a JSON object"});
  std::vector<std::string> problems;
  for (const auto& [key, value] : j.items()) {
    auto it = setters().find(key);
    if (it == setters().end()) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    try {
      it->second(base, value);
    } catch (const std::exception& e) {
      problems.push_back(key + ": " + e.what());
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return base;
}

}  // namespace relclust
