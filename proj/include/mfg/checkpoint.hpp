#pragma once

// Binary checkpoint container.
//
// Layout (all integers u64 and all reals f64, little-endian):
//   magic "MFGCKPT\0" | version | metadata count | (key, value)* |
//   layer count | layer sizes | parameters (MlpParams flat order) |
//   optimizer kind | beta1 | beta2 | eps | weight decay | step |
//   first moments | second moments | epoch | rng state
// Strings are stored as a u64 byte length followed by the bytes.

#include "mfg/nn.hpp"

#include <map>
#include <string>

namespace mfg {

inline constexpr std::uint64_t kCheckpointVersion = 1;

struct Checkpoint {
  nn::MlpParams params;
  nn::OptimState optim;
  std::uint64_t epoch = 0;
  std::string rng_state; // textual std::mt19937_64 state
  std::map<std::string, std::string> metadata;

  bool operator==(const Checkpoint &) const = default;
};

std::string encode_checkpoint(const Checkpoint &ckpt);
Checkpoint decode_checkpoint(const std::string &bytes);

void write_checkpoint(const std::string &path, const Checkpoint &ckpt);
Checkpoint read_checkpoint(const std::string &path);

std::string rng_to_string(const nn::Rng &rng);
nn::Rng rng_from_string(const std::string &state);

} // namespace mfg
