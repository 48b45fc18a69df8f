#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "g2pm/tensor.hpp"

namespace g2pm::nn {

// Versioned binary container: a JSON metadata blob plus named tensors stored
// as raw little-endian doubles, so a save/load round trip is bit-exact.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  // Throws ContractError for a missing name.
  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws IoError for unreadable files and ParseError for corrupt ones.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace g2pm::nn
