#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "relclust/config.hpp"
#include "relclust/encoder.hpp"

namespace relclust {

/// Both encoders plus what is needed to rebuild their inputs.
struct Checkpoint {
  RunConfig config;
  std::vector<std::string> vocabulary;
  std::size_t epoch = 0;
  EncoderParams momentum;    // theta
  EncoderParams propulsion;  // theta_prime
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[] = "RCLCKPT1";

/// Layout: 8-byte magic, little-endian u64 header length, JSON header
/// (config, vocabulary, epoch, tensor table), then raw little-endian
/// doubles for each tensor in table order, row-major.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace relclust
