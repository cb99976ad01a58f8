#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnap/network.hpp"

namespace gnap {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// Where the seeded streams stand. Every stream is keyed by (seed, epoch) or
/// (seed, phase), so these three numbers are enough to continue a run.
struct RngCursor {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::size_t phases = 0;
  bool operator==(const RngCursor&) const = default;
};

struct Checkpoint {
  int version = kCheckpointVersion;
  Network<float> net;
  std::map<std::string, std::string> config;  // echo of the run flags
  RngCursor cursor;
  bool has_optimizer = false;
};

/// Container layout: a text manifest ending in a line "end", followed by one
/// binary section per manifest "section" line. Each section is a u64 byte
/// length then the payload; all scalars little-endian.
std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net,
                                               const std::map<std::string, std::string>& config, const RngCursor& cursor,
                                               bool with_optimizer = true);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                     const std::map<std::string, std::string>& config, const RngCursor& cursor,
                     bool with_optimizer = true);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gnap
