#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>

#include "eval.hpp"
#include "model.hpp"

namespace flowparts {

struct PairInference {
  CapsuleSet<float> caps_a;
  CapsuleSet<float> caps_b;
  MaskStack<float> masks_a;
  FlowField flow;
};

PairInference infer_pair(const FlowCapsuleModel<float>& model, const Image& image_a,
                         const Image& image_b);

struct EvalOptions {
  std::string split = "test";
  int limit = -1;     // < 0: whole split
  int clusters = 0;   // 0: skip k-means
  LabelExtractor labels = LabelExtractor::kShapeSet;
  uint64_t seed = 0;
};

struct EvalReport {
  IoUReport amodal;
  IoUReport visible;
  double epe = 0.0;
  long epe_pixels = 0;
  std::optional<ClusterReport> cluster;
  std::vector<std::string> label_names;  // index -> label key
};

EvalReport evaluate(const FlowCapsuleModel<float>& model, const std::filesystem::path& dataset_dir,
                    const EvalOptions& options);

nlohmann::json eval_report_to_json(const EvalReport& report, const std::string& dataset,
                                   const std::string& checkpoint);

}  // namespace flowparts
