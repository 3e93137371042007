#pragma once

// Checkpoint container:
//   "FPCKPT01" | u64 header length | JSON header | arrays...
// where each array is  u32 name length | name | u64 count | float32[count],
// all little-endian. The header records C, K, resolution, the architecture
// and the training position.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"

namespace flowparts {

struct Checkpoint {
  ModelConfig model;
  nlohmann::json training = nlohmann::json::object();
  std::vector<std::pair<std::string, std::vector<float>>> arrays;

  const std::vector<float>* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint checkpoint_from_model(const FlowCapsuleModel<float>& model);
FlowCapsuleModel<float> model_from_checkpoint(const Checkpoint& checkpoint);
FlowCapsuleModel<float> load_model(const std::filesystem::path& path);

}  // namespace flowparts
