#include "evaluation.hpp"

#include <cmath>
#include <map>

#include "datagen.hpp"
#include "error.hpp"

namespace flowparts {

using nlohmann::json;

PairInference infer_pair(const FlowCapsuleModel<float>& model, const Image& image_a,
                         const Image& image_b) {
  PairInference out;
  out.caps_a = model.encode(image_a);
  out.caps_b = model.encode(image_b);
  out.masks_a = model.masks(out.caps_a);
  out.flow = to_flow_field(model.flow(out.caps_a, out.caps_b, out.masks_a),
                           model.config().height, model.config().width);
  return out;
}

EvalReport evaluate(const FlowCapsuleModel<float>& model, const std::filesystem::path& dataset_dir,
                    const EvalOptions& options) {
  const auto manifest = read_manifest(dataset_dir);
  const auto it = manifest.splits.find(options.split);
  if (it == manifest.splits.end()) {
    fail(ErrorCode::kIo, "dataset " + dataset_dir.string() + " has no split '" + options.split + "'");
  }
  const auto& entries = it->second;
  const size_t count = options.limit < 0 ? entries.size()
                                         : std::min(entries.size(), static_cast<size_t>(options.limit));
  const int h = model.config().height;
  const int w = model.config().width;
  const size_t plane = static_cast<size_t>(h) * w;

  IoUAccumulator amodal;
  IoUAccumulator visible;
  double epe_sum = 0.0;
  long epe_pixels = 0;
  FeatureMatrix features;
  std::vector<int> labels;
  std::map<std::string, int> label_ids;
  EvalReport report;

  for (size_t s = 0; s < count; ++s) {
    const auto sample = read_sample(dataset_dir, options.split, entries[s]);
    const auto inf = infer_pair(model, sample.image_a, sample.image_b);
    const auto match = match_parts(inf.masks_a.raw, inf.masks_a.num_masks, h, w, sample.amodal_masks);
    amodal.add(sample.labels, match.ious);

    std::vector<double> vis_ious;
    for (size_t g = 0; g < sample.visible_masks.size(); ++g) {
      const int k = match.assignment[g];
      if (k < 0) {
        vis_ious.push_back(0.0);
        continue;
      }
      const auto pred = binarize(inf.masks_a.visible.data() + static_cast<size_t>(k) * plane, h, w);
      vis_ious.push_back(iou(pred, sample.visible_masks[g]));
    }
    visible.add(sample.labels, vis_ious);

    BinaryMask fg(h, w);
    for (const auto& m : sample.visible_masks) {
      for (size_t p = 0; p < plane; ++p) fg.data[p] |= m.data[p];
    }
    const size_t fg_count = fg.count();
    if (fg_count > 0) {
      epe_sum += flow_epe(inf.flow, sample.gt_flow, fg) * static_cast<double>(fg_count);
      epe_pixels += static_cast<long>(fg_count);
    }

    if (options.clusters > 0) {
      std::vector<double> f;
      for (const auto& c : inf.caps_a) {
        f.insert(f.end(), c.shape_code.begin(), c.shape_code.end());
        f.insert(f.end(), {c.pose.tx, c.pose.ty, c.pose.rot, c.pose.scale, c.depth_logit});
      }
      features.push_back(std::move(f));
      const auto key = label_key(sample.labels, options.labels);
      const auto [pos, inserted] = label_ids.emplace(key, static_cast<int>(label_ids.size()));
      labels.push_back(pos->second);
    }
  }

  report.amodal = amodal.report();
  report.visible = visible.report();
  report.epe = epe_pixels > 0 ? epe_sum / static_cast<double>(epe_pixels) : std::nan("");
  report.epe_pixels = epe_pixels;
  if (options.clusters > 0 && !features.empty()) {
    report.cluster = kmeans_classify(features, labels,
                                     std::min<int>(options.clusters, static_cast<int>(features.size())),
                                     options.seed);
    report.label_names.resize(label_ids.size());
    for (const auto& [key, id] : label_ids) report.label_names[static_cast<size_t>(id)] = key;
  }
  return report;
}

json eval_report_to_json(const EvalReport& r, const std::string& dataset,
                         const std::string& checkpoint) {
  json out = {{"dataset", dataset},
              {"checkpoint", checkpoint},
              {"per_class", r.amodal.per_class},
              {"overall", r.amodal.overall},
              {"n_samples", r.amodal.n_samples},
              {"visible", iou_report_to_json(r.visible)},
              {"epe", r.epe_pixels > 0 ? json(r.epe) : json(nullptr)},
              {"epe_pixels", r.epe_pixels}};
  if (r.cluster) {
    auto c = cluster_report_to_json(*r.cluster);
    c["labels"] = r.label_names;
    out["cluster"] = c;
  }
  return out;
}

}  // namespace flowparts
