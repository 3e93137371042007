#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "error.hpp"

namespace flowparts {

using nlohmann::json;

BinaryMask binarize(const float* mask, int height, int width) {
  BinaryMask out(height, width);
  const size_t n = out.data.size();
  float max_value = 0.0f;
  for (size_t i = 0; i < n; ++i) max_value = std::max(max_value, mask[i]);
  if (!(max_value > kBinarizeEps)) return out;
  for (size_t i = 0; i < n; ++i) out.data[i] = mask[i] / max_value >= 0.5f ? 1 : 0;
  return out;
}

BinaryMask binarize(const std::vector<float>& mask, int height, int width) {
  if (mask.size() != static_cast<size_t>(height) * width) {
    fail(ErrorCode::kShape, "binarize: mask size mismatch");
  }
  return binarize(mask.data(), height, width);
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    fail(ErrorCode::kShape, "iou: mask shapes differ");
  }
  size_t inter = 0;
  size_t uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0;
    const bool y = b.data[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> optimal_assignment(const std::vector<std::vector<double>>& score) {
  const int rows = static_cast<int>(score.size());
  if (rows == 0) return {};
  const int cols = static_cast<int>(score[0].size());
  if (cols < rows) {
    fail(ErrorCode::kInvalidArgument, "optimal_assignment needs at least as many columns as rows");
  }
  // Shortest augmenting path Hungarian, 1-indexed potentials; minimizes -score.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<int> match(cols + 1, 0), way(cols + 1, 0);
  for (int i = 1; i <= rows; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<bool> used(cols + 1, false);
    do {
      used[j0] = true;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = -score[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(rows, -1);
  for (int j = 1; j <= cols; ++j) {
    if (match[j] != 0) assignment[match[j] - 1] = j - 1;
  }
  return assignment;
}

PartMatch match_binary_parts(const std::vector<BinaryMask>& predicted,
                             const std::vector<BinaryMask>& ground_truth) {
  PartMatch result;
  const size_t n = ground_truth.size();
  if (n == 0) return result;
  const size_t cols = std::max(predicted.size(), n);
  std::vector<std::vector<double>> score(n, std::vector<double>(cols, 0.0));
  for (size_t g = 0; g < n; ++g) {
    for (size_t p = 0; p < predicted.size(); ++p) score[g][p] = iou(ground_truth[g], predicted[p]);
  }
  result.assignment = optimal_assignment(score);
  for (size_t g = 0; g < n; ++g) {
    int& a = result.assignment[g];
    if (a >= static_cast<int>(predicted.size())) a = -1;
    result.ious.push_back(a >= 0 ? score[g][static_cast<size_t>(a)] : 0.0);
  }
  return result;
}

PartMatch match_parts(const std::vector<float>& raw, int num_masks, int height, int width,
                      const std::vector<BinaryMask>& gt_amodal) {
  const size_t plane = static_cast<size_t>(height) * width;
  if (raw.size() != plane * num_masks) fail(ErrorCode::kShape, "match_parts: mask stack size mismatch");
  std::vector<BinaryMask> predicted;
  for (int k = 0; k < num_masks; ++k) predicted.push_back(binarize(raw.data() + k * plane, height, width));
  return match_binary_parts(predicted, gt_amodal);
}

void IoUAccumulator::add(const std::vector<ShapeKind>& labels, const std::vector<double>& ious) {
  if (labels.size() != ious.size()) fail(ErrorCode::kShape, "IoU labels and values differ in length");
  for (size_t i = 0; i < labels.size(); ++i) {
    auto& [sum, count] = per_class_[shape_kind_name(labels[i])];
    sum += ious[i];
    ++count;
    total_ += ious[i];
    ++parts_;
  }
  ++samples_;
}

IoUReport IoUAccumulator::report() const {
  IoUReport r;
  for (const auto& [name, acc] : per_class_) r.per_class[name] = acc.first / acc.second;
  r.overall = parts_ > 0 ? total_ / parts_ : 0.0;
  r.n_samples = samples_;
  return r;
}

double flow_epe(const FlowField& predicted, const FlowField& gt, const BinaryMask& region) {
  if (predicted.height != gt.height || predicted.width != gt.width ||
      region.height != gt.height || region.width != gt.width) {
    fail(ErrorCode::kShape, "flow_epe: shapes differ");
  }
  double sum = 0.0;
  size_t count = 0;
  for (size_t p = 0; p < region.data.size(); ++p) {
    if (!region.data[p]) continue;
    const double du = static_cast<double>(predicted.data[2 * p]) - gt.data[2 * p];
    const double dv = static_cast<double>(predicted.data[2 * p + 1]) - gt.data[2 * p + 1];
    sum += std::sqrt(du * du + dv * dv);
    ++count;
  }
  if (count == 0) fail(ErrorCode::kUndefinedRegion, "flow_epe: evaluation region is empty");
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// k-means

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

int nearest(const std::vector<double>& x, const FeatureMatrix& centers) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < centers.size(); ++c) {
    const double d = squared_distance(x, centers[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

FeatureMatrix kmeans_pp_init(const FeatureMatrix& features, int n_clusters, std::mt19937_64& rng) {
  const size_t n = features.size();
  FeatureMatrix centers;
  std::uniform_int_distribution<size_t> first(0, n - 1);
  centers.push_back(features[first(rng)]);
  std::vector<double> d2(n);
  for (size_t i = 0; i < n; ++i) d2[i] = squared_distance(features[i], centers[0]);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<int>(centers.size()) < n_clusters) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    size_t pick = 0;
    if (total > 0.0) {
      double r = unit(rng) * total;
      pick = n;
      size_t last_positive = 0;
      for (size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        last_positive = i;
        if (r < d2[i]) {
          pick = i;
          break;
        }
        r -= d2[i];
      }
      // Round-off can exhaust r; never pick an already-chosen point.
      if (pick == n) pick = last_positive;
    }
    centers.push_back(features[pick]);
    for (size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(features[i], centers.back()));
  }
  return centers;
}

std::vector<int> lloyd(const FeatureMatrix& features, FeatureMatrix& centers, int max_iters) {
  const size_t n = features.size();
  const size_t dim = features.empty() ? 0 : features[0].size();
  std::vector<int> assign(n, -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      const int c = nearest(features[i], centers);
      if (c != assign[i]) {
        assign[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    FeatureMatrix sums(centers.size(), std::vector<double>(dim, 0.0));
    std::vector<int> counts(centers.size(), 0);
    for (size_t i = 0; i < n; ++i) {
      const auto c = static_cast<size_t>(assign[i]);
      for (size_t d = 0; d < dim; ++d) sums[c][d] += features[i][d];
      ++counts[c];
    }
    for (size_t c = 0; c < centers.size(); ++c) {
      if (counts[c] == 0) continue;  // empty clusters keep their center
      for (size_t d = 0; d < dim; ++d) centers[c][d] = sums[c][d] / counts[c];
    }
  }
  return assign;
}

ClusterReport kmeans_classify(const FeatureMatrix& features, const std::vector<int>& labels,
                              int n_clusters, uint64_t seed, int max_iters) {
  const size_t n = features.size();
  if (labels.size() != n) fail(ErrorCode::kShape, "kmeans_classify: feature/label count mismatch");
  if (n_clusters < 1 || n < static_cast<size_t>(n_clusters)) {
    fail(ErrorCode::kInvalidArgument, "kmeans_classify needs 1 <= n_clusters <= N");
  }
  for (const auto& f : features) {
    if (f.size() != features[0].size()) fail(ErrorCode::kShape, "ragged feature matrix");
  }
  std::mt19937_64 rng(seed);
  auto centers = kmeans_pp_init(features, n_clusters, rng);
  ClusterReport report;
  report.n_clusters = n_clusters;
  report.assignments = lloyd(features, centers, max_iters);
  report.cluster_sizes.assign(static_cast<size_t>(n_clusters), 0);
  std::vector<std::map<int, int>> votes(static_cast<size_t>(n_clusters));
  std::map<int, int> label_counts;
  for (size_t i = 0; i < n; ++i) {
    const auto c = static_cast<size_t>(report.assignments[i]);
    ++report.cluster_sizes[c];
    ++votes[c][labels[i]];
    ++label_counts[labels[i]];
  }
  int correct = 0;
  for (const auto& v : votes) {
    int best = 0;
    for (const auto& [label, count] : v) best = std::max(best, count);
    correct += best;
  }
  int majority = 0;
  for (const auto& [label, count] : label_counts) majority = std::max(majority, count);
  report.non_empty = static_cast<int>(std::count_if(report.cluster_sizes.begin(),
                                                    report.cluster_sizes.end(),
                                                    [](int s) { return s > 0; }));
  report.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  report.majority_baseline = static_cast<double>(majority) / static_cast<double>(n);
  return report;
}

LabelExtractor parse_label_extractor(const std::string& name) {
  if (name == "shape_set") return LabelExtractor::kShapeSet;
  if (name == "shape_count") return LabelExtractor::kShapeCount;
  fail(ErrorCode::kConfig, "unknown label extractor '" + name + "'");
}

std::string label_key(const std::vector<ShapeKind>& shapes, LabelExtractor extractor) {
  if (extractor == LabelExtractor::kShapeCount) return std::to_string(shapes.size());
  std::vector<std::string> names;
  for (auto k : shapes) names.emplace_back(shape_kind_name(k));
  std::sort(names.begin(), names.end());
  std::string key;
  for (const auto& s : names) key += (key.empty() ? "" : "+") + s;
  return key;
}

json iou_report_to_json(const IoUReport& r) {
  return {{"per_class", r.per_class}, {"overall", r.overall}, {"n_samples", r.n_samples}};
}

json cluster_report_to_json(const ClusterReport& r) {
  return {{"n_clusters", r.n_clusters},
          {"non_empty", r.non_empty},
          {"accuracy", r.accuracy},
          {"majority_baseline", r.majority_baseline},
          {"cluster_sizes", r.cluster_sizes}};
}

}  // namespace flowparts
