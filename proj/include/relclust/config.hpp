#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "relclust/encoder.hpp"

namespace relclust {

struct RunConfig {
  std::size_t span_count = 2;  // P
  std::size_t layers = 3;      // L
  double temperature = 0.02;
  double momentum = 0.999;
  std::size_t queue_size = 512;  // J
  double damping = 0.7;
  std::size_t ap_max_iter = 400;
  std::size_t ap_stable_window = 10;
  std::size_t epochs = 20;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 64;
  EncoderDims dims;
  std::uint64_t seed = 1;

  bool disable_exem_nce = false;
  bool use_kmeans = false;
  bool disable_cha = false;
  /// Attention sharpness; 1/sqrt(feature dim) when unset.
  std::optional<double> cha_sharpness;
  double cha_mix = 0.5;
  std::optional<std::size_t> target_cluster_count;
};

/// Every violated constraint, one message each; empty when valid.
std::vector<std::string> config_problems(const RunConfig& config);

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Throws ConfigError listing all problems.
void validate_config(const RunConfig& config);

nlohmann::ordered_json config_to_json(const RunConfig& config);
/// Overlays the flat keys of `j` onto `base`. Unknown keys and wrongly
/// typed values are collected and reported together as a ConfigError.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});

}  // namespace relclust
