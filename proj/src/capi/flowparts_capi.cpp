#include "flowparts.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "app.hpp"
#include "checkpoint.hpp"
#include "error.hpp"
#include "image.hpp"
#include "model.hpp"

struct fp_model {
  flowparts::FlowCapsuleModel<float> model;
};

namespace {

using flowparts::ErrorCode;
using nlohmann::json;

thread_local std::string g_last_error;

fp_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return FP_ERR_INVALID_ARGUMENT;
    case ErrorCode::kDegeneratePose: return FP_ERR_DEGENERATE_POSE;
    case ErrorCode::kShape: return FP_ERR_SHAPE;
    case ErrorCode::kConfig: return FP_ERR_CONFIG;
    case ErrorCode::kAsset: return FP_ERR_ASSET;
    case ErrorCode::kIo: return FP_ERR_IO;
    case ErrorCode::kIncompatible: return FP_ERR_INCOMPATIBLE;
    case ErrorCode::kNonFinite: return FP_ERR_NON_FINITE;
    case ErrorCode::kUndefinedRegion: return FP_ERR_UNDEFINED_REGION;
    case ErrorCode::kInternal: return FP_ERR_INTERNAL;
  }
  return FP_ERR_INTERNAL;
}

template <typename F>
fp_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return FP_OK;
  } catch (const flowparts::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return FP_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return FP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FP_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return FP_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) flowparts::fail(ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

void emit(char** out, const json& j) {
  if (!out) return;
  const std::string s = j.dump(2);
  char* buf = static_cast<char*>(std::malloc(s.size() + 1));
  if (!buf) throw std::bad_alloc();
  std::memcpy(buf, s.c_str(), s.size() + 1);
  *out = buf;
}

std::optional<uint64_t> opt_seed(const uint64_t* seed) {
  return seed ? std::optional<uint64_t>(*seed) : std::nullopt;
}

flowparts::Image wrap_image(const fp_model* m, const float* data, int height, int width) {
  require(data, "image");
  const auto& cfg = m->model.config();
  if (height != cfg.height || width != cfg.width) {
    flowparts::fail(ErrorCode::kShape, "image is " + std::to_string(height) + "x" +
                                           std::to_string(width) + ", model expects " +
                                           std::to_string(cfg.height) + "x" +
                                           std::to_string(cfg.width));
  }
  flowparts::Image image(height, width, 3);
  std::memcpy(image.data.data(), data, image.data.size() * sizeof(float));
  return image;
}

void check_len(size_t got, size_t want, const char* what) {
  if (got < want) {
    flowparts::fail(ErrorCode::kShape, std::string(what) + " buffer holds " + std::to_string(got) +
                                           " floats, needs " + std::to_string(want));
  }
}

}  // namespace

extern "C" {

const char* fp_version(void) { return "0.1.0"; }

const char* fp_last_error(void) { return g_last_error.c_str(); }

const char* fp_status_name(fp_status status) {
  if (status == FP_OK) return "ok";
  if (status < FP_ERR_INVALID_ARGUMENT || status > FP_ERR_INTERNAL) return "unknown";
  return flowparts::error_code_name(static_cast<ErrorCode>(status));
}

int fp_exit_code(fp_status status) {
  switch (status) {
    case FP_OK: return 0;
    case FP_ERR_INVALID_ARGUMENT:
    case FP_ERR_CONFIG:
    case FP_ERR_ASSET:
    case FP_ERR_IO:
    case FP_ERR_INCOMPATIBLE:
    case FP_ERR_SHAPE:
      return 2;
    default:
      return 1;
  }
}

void fp_free(void* ptr) { std::free(ptr); }

fp_status fp_gen(const char* config_path, const char* out_dir, int dry_run, const uint64_t* seed,
                 char** summary_json) {
  return guarded([&] {
    require(config_path, "config_path");
    if (!dry_run) require(out_dir, "out_dir");
    const auto config = flowparts::load_json_file(config_path);
    const auto r = flowparts::run_gen(config, out_dir ? out_dir : "", dry_run != 0, opt_seed(seed));
    emit(summary_json, {{"samples", r.samples}, {"splits", r.per_split}, {"dry_run", dry_run != 0}});
  });
}

fp_status fp_train(const char* config_path, const char* data_dir, const char* out_dir,
                   int deterministic, const uint64_t* seed, const char* resume_ckpt,
                   char** summary_json) {
  return guarded([&] {
    require(config_path, "config_path");
    require(out_dir, "out_dir");
    const auto config = flowparts::load_json_file(config_path);
    const auto r = flowparts::run_train(config, data_dir ? data_dir : "", out_dir,
                                        deterministic != 0, opt_seed(seed),
                                        resume_ckpt ? resume_ckpt : "");
    json summary = {{"checkpoint", r.checkpoint.string()},
                    {"step", r.step},
                    {"completed", r.completed}};
    if (!r.metrics.empty()) summary["last_metrics"] = r.metrics.back();
    emit(summary_json, summary);
  });
}

void fp_eval_options_default(fp_eval_options* options) {
  if (!options) return;
  options->split = "test";
  options->limit = -1;
  options->clusters = 0;
  options->labels = "shape_set";
  options->seed = 0;
}

fp_status fp_eval(const char* checkpoint, const char* data_dir, const char* report_path,
                  const fp_eval_options* options, char** report_json) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(data_dir, "data_dir");
    flowparts::EvalOptions eo;
    if (options) {
      if (options->split) eo.split = options->split;
      eo.limit = options->limit;
      if (options->clusters < 0) {
        flowparts::fail(ErrorCode::kInvalidArgument, "clusters must be >= 0");
      }
      eo.clusters = options->clusters;
      if (options->labels) eo.labels = flowparts::parse_label_extractor(options->labels);
      eo.seed = options->seed;
    }
    const auto j = flowparts::run_eval(checkpoint, data_dir, report_path ? report_path : "", eo);
    emit(report_json, j);
  });
}

fp_status fp_ablate(const char* config_path, const char* sweep_path, const char* out_dir,
                    const uint64_t* seed, char** report_json) {
  return guarded([&] {
    require(config_path, "config_path");
    require(sweep_path, "sweep_path");
    const auto config = flowparts::load_json_file(config_path);
    const auto sweep = flowparts::load_json_file(sweep_path);
    std::string dir = out_dir ? out_dir : sweep.value("out_dir", std::string("ablation"));
    const auto j = flowparts::run_ablate(config, sweep, dir, opt_seed(seed));
    emit(report_json, j);
  });
}

fp_status fp_viz(const char* checkpoint, const char* data_dir, const char* split, int sample,
                 const char* image_path, const char* out_dir, char** summary_json) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(out_dir, "out_dir");
    flowparts::VizRequest req;
    req.checkpoint = checkpoint;
    req.out_dir = out_dir;
    if (split) req.split = split;
    const bool have_sample = sample >= 0;
    const bool have_image = image_path && *image_path;
    if (have_sample == have_image) {
      flowparts::fail(ErrorCode::kInvalidArgument, "viz needs exactly one of a sample or an image");
    }
    if (have_sample) {
      require(data_dir, "data_dir");
      req.data_dir = data_dir;
      req.sample = sample;
    } else {
      req.image = image_path;
    }
    const auto files = flowparts::run_viz(req);
    json names = json::array();
    for (const auto& f : files) names.push_back(f.string());
    emit(summary_json, {{"files", names}});
  });
}

fp_status fp_model_load(const char* checkpoint, fp_model** out) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(out, "out");
    *out = nullptr;
    *out = new fp_model{flowparts::load_model(checkpoint)};
  });
}

void fp_model_free(fp_model* model) { delete model; }

fp_status fp_model_info(const fp_model* model, char** info_json) {
  return guarded([&] {
    require(model, "model");
    emit(info_json, flowparts::model_config_to_json(model->model.config()));
  });
}

fp_status fp_model_encode(const fp_model* model, const float* image, int height, int width,
                          float* capsules, size_t capsules_len) {
  return guarded([&] {
    require(model, "model");
    require(capsules, "capsules");
    const auto& cfg = model->model.config();
    check_len(capsules_len, static_cast<size_t>(cfg.num_capsules) * cfg.capsule_dim, "capsules");
    const auto caps = model->model.encode(wrap_image(model, image, height, width));
    float* dst = capsules;
    for (const auto& c : caps) {
      dst = std::copy(c.shape_code.begin(), c.shape_code.end(), dst);
      *dst++ = c.pose.tx;
      *dst++ = c.pose.ty;
      *dst++ = c.pose.rot;
      *dst++ = c.pose.scale;
      *dst++ = c.depth_logit;
    }
  });
}

fp_status fp_model_masks(const fp_model* model, const float* image, int height, int width,
                         float* masks, float* visible, size_t len) {
  return guarded([&] {
    require(model, "model");
    require(masks, "masks");
    const auto& cfg = model->model.config();
    check_len(len, static_cast<size_t>(cfg.num_capsules) * height * width, "masks");
    const auto stack = model->model.masks(model->model.encode(wrap_image(model, image, height, width)));
    std::copy(stack.raw.begin(), stack.raw.end(), masks);
    if (visible) std::copy(stack.visible.begin(), stack.visible.end(), visible);
  });
}

fp_status fp_model_flow(const fp_model* model, const float* image_a, const float* image_b,
                        int height, int width, float* flow, size_t len) {
  return guarded([&] {
    require(model, "model");
    require(flow, "flow");
    check_len(len, static_cast<size_t>(height) * width * 2, "flow");
    const auto a = wrap_image(model, image_a, height, width);
    const auto b = wrap_image(model, image_b, height, width);
    const auto caps_a = model->model.encode(a);
    const auto caps_b = model->model.encode(b);
    const auto f = model->model.flow(caps_a, caps_b, model->model.masks(caps_a));
    std::copy(f.begin(), f.end(), flow);
  });
}

fp_status fp_flo_read(const char* path, int* height, int* width, float** data) {
  return guarded([&] {
    require(path, "path");
    require(height, "height");
    require(width, "width");
    require(data, "data");
    const auto flow = flowparts::read_flo(path);
    float* buf = static_cast<float*>(std::malloc(flow.data.size() * sizeof(float) + 1));
    if (!buf) throw std::bad_alloc();
    std::copy(flow.data.begin(), flow.data.end(), buf);
    *height = flow.height;
    *width = flow.width;
    *data = buf;
  });
}

fp_status fp_flo_write(const char* path, int height, int width, const float* data) {
  return guarded([&] {
    require(path, "path");
    require(data, "data");
    if (height <= 0 || width <= 0) {
      flowparts::fail(ErrorCode::kInvalidArgument, "flow dimensions must be positive");
    }
    flowparts::FlowField flow(height, width);
    std::copy(data, data + flow.data.size(), flow.data.begin());
    flowparts::write_flo(path, flow);
  });
}

}  // extern "C"
