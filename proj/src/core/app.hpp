#pragma once

// Command implementations shared by the C API and the CLI.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evaluation.hpp"
#include "training.hpp"

namespace flowparts {

// Parses a JSON file; missing or malformed files are config errors.
nlohmann::json load_json_file(const std::filesystem::path& path);

// A config file may hold the generator settings under "data" and the
// training settings under "train"; a flat file is used as-is for both.
nlohmann::json config_section(const nlohmann::json& config, const char* name);

struct GenResult {
  size_t samples = 0;
  std::map<std::string, size_t> per_split;
};

GenResult run_gen(const nlohmann::json& config, const std::filesystem::path& out_dir, bool dry_run,
                  std::optional<uint64_t> seed_override);

TrainResult run_train(const nlohmann::json& config, const std::filesystem::path& data_dir,
                      const std::filesystem::path& out_dir, bool deterministic,
                      std::optional<uint64_t> seed_override,
                      const std::filesystem::path& resume_from = {});

nlohmann::json run_eval(const std::filesystem::path& checkpoint,
                        const std::filesystem::path& data_dir,
                        const std::filesystem::path& report_path, const EvalOptions& options);

struct AblationVariant {
  std::string axis;
  nlohmann::json value;
  nlohmann::json overrides;
};

std::vector<AblationVariant> ablation_variants(const nlohmann::json& sweep);
nlohmann::json apply_variant(const nlohmann::json& base_config, const AblationVariant& variant);
std::string ablation_markdown(const nlohmann::json& report);

// Trains every variant x seed, evaluates on the test split and writes
// ablation.json / ablation.md into `out_dir`. Failed runs are recorded and
// the sweep continues.
nlohmann::json run_ablate(const nlohmann::json& base_config, const nlohmann::json& sweep,
                          const std::filesystem::path& out_dir,
                          std::optional<uint64_t> seed_override);

struct VizRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;
  std::string split = "test";
  std::optional<int> sample;
  std::filesystem::path image;
  std::filesystem::path out_dir;
};

std::vector<std::filesystem::path> run_viz(const VizRequest& request);

}  // namespace flowparts
