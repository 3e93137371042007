#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "datagen.hpp"
#include "image.hpp"

namespace flowparts {

inline constexpr double kBinarizeEps = 1e-6;

// Normalize by the maximum, then threshold at 0.5.
BinaryMask binarize(const float* mask, int height, int width);
BinaryMask binarize(const std::vector<float>& mask, int height, int width);

double iou(const BinaryMask& a, const BinaryMask& b);

struct PartMatch {
  std::vector<int> assignment;  // per ground-truth part: predicted index, or -1
  std::vector<double> ious;     // per ground-truth part
};

// Maximum-total-IoU one-to-one assignment (Hungarian algorithm).
std::vector<int> optimal_assignment(const std::vector<std::vector<double>>& score);

PartMatch match_binary_parts(const std::vector<BinaryMask>& predicted,
                             const std::vector<BinaryMask>& ground_truth);

// Binarizes `raw` (K x H x W) and matches it against the amodal ground truth.
PartMatch match_parts(const std::vector<float>& raw, int num_masks, int height, int width,
                      const std::vector<BinaryMask>& gt_amodal);

struct IoUReport {
  std::map<std::string, double> per_class;
  double overall = 0.0;
  int n_samples = 0;
};

class IoUAccumulator {
 public:
  void add(const std::vector<ShapeKind>& labels, const std::vector<double>& ious);
  IoUReport report() const;

 private:
  std::map<std::string, std::pair<double, int>> per_class_;
  double total_ = 0.0;
  int parts_ = 0;
  int samples_ = 0;
};

double flow_epe(const FlowField& predicted, const FlowField& gt, const BinaryMask& region);

struct ClusterReport {
  int n_clusters = 0;
  int non_empty = 0;
  double accuracy = 0.0;
  double majority_baseline = 0.0;
  std::vector<int> cluster_sizes;
  std::vector<int> assignments;
};

using FeatureMatrix = std::vector<std::vector<double>>;

FeatureMatrix kmeans_pp_init(const FeatureMatrix& features, int n_clusters, std::mt19937_64& rng);
std::vector<int> lloyd(const FeatureMatrix& features, FeatureMatrix& centers, int max_iters);

ClusterReport kmeans_classify(const FeatureMatrix& features, const std::vector<int>& labels,
                              int n_clusters, uint64_t seed, int max_iters = 100);

// Maps manifest entries to integer class labels.
enum class LabelExtractor { kShapeSet, kShapeCount };
LabelExtractor parse_label_extractor(const std::string& name);
std::string label_key(const std::vector<ShapeKind>& shapes, LabelExtractor extractor);

nlohmann::json iou_report_to_json(const IoUReport& report);
nlohmann::json cluster_report_to_json(const ClusterReport& report);

}  // namespace flowparts
