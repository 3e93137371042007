// flowparts command-line front end. Talks to the library only through the C API.

#include <CLI11.hpp>

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>

#include "flowparts.h"

namespace {

constexpr int kUsageError = 2;

// FLOWPARTS_SEED overrides the seed from the config file.
bool seed_from_env(std::optional<uint64_t>& seed) {
  const char* raw = std::getenv("FLOWPARTS_SEED");
  if (!raw || !*raw) return true;
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (errno != 0 || *end != '\0' || raw[0] == '-') {
    std::fprintf(stderr, "flowparts: FLOWPARTS_SEED must be a non-negative integer, got '%s'\n", raw);
    return false;
  }
  seed = static_cast<uint64_t>(v);
  return true;
}

int finish(const char* command, fp_status status, char*& json_out) {
  if (status == FP_OK) {
    if (json_out) std::printf("%s\n", json_out);
  } else {
    std::fprintf(stderr, "flowparts %s: %s: %s\n", command, fp_status_name(status), fp_last_error());
  }
  fp_free(json_out);
  json_out = nullptr;
  return fp_exit_code(status);
}

const char* opt_str(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowparts: part discovery from frame pairs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fp_version()));

  std::string config, out, data, ckpt, report, sweep, image, split = "test", labels = "shape_set",
                                                              resume;
  bool dry_run = false;
  bool deterministic = false;
  int clusters = 0;
  int limit = -1;
  int sample = -1;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--config", config, "Generator config (JSON)")->required();
  gen->add_option("--out", out, "Output directory");
  gen->add_flag("--dry-run", dry_run, "Report counts without writing");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config, "Training config (JSON)")->required();
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_flag("--deterministic", deterministic, "Bit-reproducible training");
  train->add_option("--resume", resume, "Resume from a checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--report", report, "Report path (JSON)")->required();
  eval->add_option("--clusters", clusters, "k-means clusters (0 disables)")
      ->check(CLI::NonNegativeNumber);
  eval->add_option("--split", split, "Dataset split");
  eval->add_option("--limit", limit, "Evaluate at most N samples");
  eval->add_option("--labels", labels, "Cluster labels: shape_set or shape_count");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep");
  ablate->add_option("--config", config, "Base training config (JSON)")->required();
  ablate->add_option("--sweep", sweep, "Sweep spec (JSON)")->required();
  ablate->add_option("--out", out, "Output directory");

  auto* viz = app.add_subcommand("viz", "Render masks and flow for one input");
  viz->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  auto* sample_opt = viz->add_option("--sample", sample, "Sample index in --data/--split");
  auto* image_opt = viz->add_option("--image", image, "Single PNG image");
  sample_opt->excludes(image_opt);
  viz->add_option("--data", data, "Dataset directory");
  viz->add_option("--split", split, "Dataset split");
  viz->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageError;
  }

  std::optional<uint64_t> seed;
  if (!seed_from_env(seed)) return kUsageError;
  const uint64_t* seed_ptr = seed ? &*seed : nullptr;
  char* json_out = nullptr;

  if (*gen) {
    if (!dry_run && out.empty()) {
      std::fprintf(stderr, "flowparts gen: --out is required unless --dry-run is given\n");
      return kUsageError;
    }
    return finish("gen", fp_gen(config.c_str(), opt_str(out), dry_run, seed_ptr, &json_out), json_out);
  }
  if (*train) {
    return finish("train",
                  fp_train(config.c_str(), data.c_str(), out.c_str(), deterministic, seed_ptr,
                           opt_str(resume), &json_out),
                  json_out);
  }
  if (*eval) {
    fp_eval_options eo;
    fp_eval_options_default(&eo);
    eo.split = split.c_str();
    eo.limit = limit;
    eo.clusters = clusters;
    eo.labels = labels.c_str();
    if (seed) eo.seed = *seed;
    const fp_status st = fp_eval(ckpt.c_str(), data.c_str(), report.c_str(), &eo, nullptr);
    if (st == FP_OK) std::printf("report written to %s\n", report.c_str());
    return finish("eval", st, json_out);
  }
  if (*ablate) {
    return finish("ablate",
                  fp_ablate(config.c_str(), sweep.c_str(), opt_str(out), seed_ptr, &json_out),
                  json_out);
  }
  if (*viz) {
    if (sample < 0 && image.empty()) {
      std::fprintf(stderr, "flowparts viz: one of --sample or --image is required\n");
      return kUsageError;
    }
    if (sample >= 0 && data.empty()) {
      std::fprintf(stderr, "flowparts viz: --sample needs --data\n");
      return kUsageError;
    }
    return finish("viz",
                  fp_viz(ckpt.c_str(), opt_str(data), split.c_str(), sample, opt_str(image),
                         out.c_str(), &json_out),
                  json_out);
  }
  return kUsageError;
}
