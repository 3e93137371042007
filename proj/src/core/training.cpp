#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "datagen.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "image.hpp"

namespace flowparts {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfig, what); };
  if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
  if (epochs < 1) bad("epochs must be >= 1");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (checkpoint_every < 0 || log_every < 0) bad("checkpoint_every/log_every must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    bad("Adam betas must be in [0, 1)");
  }
  model.validate();
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    json model = j.value("model", json::object());
    if (j.contains("K")) model["K"] = j.at("K");
    if (j.contains("C")) model["C"] = j.at("C");
    c.model = model_config_from_json(model);
    c.loss = loss_options_from_json(j.value("loss", j));
    c.seed = j.value("seed", c.seed);
    if (j.contains("dataset_dir")) c.dataset_dir = j.at("dataset_dir").get<std::string>();
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    c.train_limit = j.value("train_limit", c.train_limit);
    c.val_limit = j.value("val_limit", c.val_limit);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"K", c.model.num_capsules},
          {"C", c.model.capsule_dim},
          {"model", model_config_to_json(c.model)},
          {"loss", loss_options_to_json(c.loss)},
          {"seed", c.seed},
          {"dataset_dir", c.dataset_dir.string()},
          {"checkpoint_every", c.checkpoint_every},
          {"log_every", c.log_every},
          {"train_limit", c.train_limit},
          {"val_limit", c.val_limit},
          {"deterministic", c.deterministic},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps}};
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const ParamSet<float>& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(params.zeros_like()),
      v_(params.zeros_like()) {}

void Adam::step(ParamSet<float>& params, const GradSet<float>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto step_size = static_cast<float>(lr_ / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(eps_);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& w = params.values[i];
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// State / checkpoints

TrainState fresh_train_state(const TrainConfig& config) {
  config.validate();
  TrainState state{FlowCapsuleModel<float>(config.model, config.seed), {}, 0, 0, 0, {}};
  state.optimizer = Adam(state.model.params(), config.learning_rate, config.adam_beta1,
                         config.adam_beta2, config.adam_eps);
  return state;
}

Checkpoint checkpoint_from_state(const TrainState& state, const TrainConfig& config) {
  Checkpoint ckpt = checkpoint_from_model(state.model);
  const auto& p = state.model.params();
  for (size_t i = 0; i < p.size(); ++i) {
    ckpt.arrays.emplace_back("adam.m/" + p.names[i], state.optimizer.first_moment()[i]);
    ckpt.arrays.emplace_back("adam.v/" + p.names[i], state.optimizer.second_moment()[i]);
  }
  ckpt.training = {{"step", state.step},
                   {"epoch", state.epoch},
                   {"batch_in_epoch", state.batch_in_epoch},
                   {"adam_t", state.optimizer.steps()},
                   {"seed", config.seed},
                   {"learning_rate", config.learning_rate},
                   {"accum",
                    {{"render", state.accum.render},
                     {"center", state.accum.center},
                     {"smooth", state.accum.smooth},
                     {"total", state.accum.total},
                     {"batches", state.accum.batches}}}};
  return ckpt;
}

TrainState resume(const fs::path& checkpoint, const TrainConfig& config) {
  config.validate();
  const auto ckpt = read_checkpoint(checkpoint);
  if (model_config_to_json(ckpt.model) != model_config_to_json(config.model)) {
    fail(ErrorCode::kIncompatible,
         "checkpoint " + checkpoint.string() + " architecture " +
             model_config_to_json(ckpt.model).dump() + " does not match config " +
             model_config_to_json(config.model).dump());
  }
  TrainState state = fresh_train_state(config);
  state.model = model_from_checkpoint(ckpt);
  const auto& p = state.model.params();
  for (size_t i = 0; i < p.size(); ++i) {
    const auto* m = ckpt.find("adam.m/" + p.names[i]);
    const auto* v = ckpt.find("adam.v/" + p.names[i]);
    if (!m || !v || m->size() != p.values[i].size() || v->size() != p.values[i].size()) {
      fail(ErrorCode::kIncompatible, "checkpoint lacks optimizer state for " + p.names[i]);
    }
    state.optimizer.first_moment()[i] = *m;
    state.optimizer.second_moment()[i] = *v;
  }
  try {
    const auto& t = ckpt.training;
    state.step = t.at("step").get<long>();
    state.epoch = t.at("epoch").get<int>();
    state.batch_in_epoch = t.at("batch_in_epoch").get<int>();
    state.optimizer.set_steps(t.at("adam_t").get<long>());
    const auto& a = t.at("accum");
    state.accum = {a.at("render").get<double>(), a.at("center").get<double>(),
                   a.at("smooth").get<double>(), a.at("total").get<double>(),
                   a.at("batches").get<long>()};
  } catch (const json::exception& e) {
    fail(ErrorCode::kIncompatible, "checkpoint has no resumable training state: " + std::string(e.what()));
  }
  return state;
}

// ---------------------------------------------------------------------------
// Loop

namespace {

struct TrainPair {
  PngData a;
  PngData b;
};

std::vector<TrainPair> load_train_pairs(const TrainConfig& config, const Manifest& manifest) {
  const auto it = manifest.splits.find("train");
  if (it == manifest.splits.end() || it->second.empty()) {
    fail(ErrorCode::kIo, "dataset " + config.dataset_dir.string() + " has no train samples");
  }
  const auto& entries = it->second;
  const size_t count = config.train_limit < 0
                           ? entries.size()
                           : std::min(entries.size(), static_cast<size_t>(config.train_limit));
  std::vector<TrainPair> pairs;
  pairs.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    pairs.push_back({read_png(sample_path(config.dataset_dir, "train", entries[i].idx, "a.png"), 3),
                     read_png(sample_path(config.dataset_dir, "train", entries[i].idx, "b.png"), 3)});
  }
  return pairs;
}

void check_dataset(const TrainConfig& config, const Manifest& manifest) {
  const auto& echo = manifest.config_echo;
  const int h = echo.value("height", -1);
  const int w = echo.value("width", -1);
  if (h != config.model.height || w != config.model.width) {
    fail(ErrorCode::kIncompatible, "dataset resolution " + std::to_string(h) + "x" +
                                       std::to_string(w) + " does not match model resolution");
  }
}

std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(epoch) + 1);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void append_metric(const fs::path& path, const json& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) fail(ErrorCode::kIo, "cannot append to " + path.string());
  out << line.dump() << '\n';
}

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.render) && std::isfinite(b.center) && std::isfinite(b.smooth) &&
         std::isfinite(b.total);
}

[[noreturn]] void abort_non_finite(const fs::path& out_dir, const TrainState& state,
                                   const LossBreakdown& b) {
  json params = json::object();
  const auto& p = state.model.params();
  for (size_t i = 0; i < p.size(); ++i) {
    double sq = 0.0;
    bool ok = true;
    for (float v : p.values[i]) {
      ok = ok && std::isfinite(v);
      sq += static_cast<double>(v) * v;
    }
    params[p.names[i]] = {{"norm", std::sqrt(sq)}, {"finite", ok}};
  }
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(std::to_string(v)); };
  const json diag = {{"step", state.step},
                     {"epoch", state.epoch},
                     {"batch_in_epoch", state.batch_in_epoch},
                     {"render", num(b.render)},
                     {"center", num(b.center)},
                     {"smooth", num(b.smooth)},
                     {"total", num(b.total)},
                     {"params", params}};
  const auto path = out_dir / "diagnostics.json";
  const auto text = diag.dump(1);
  write_file_bytes(path, std::vector<uint8_t>(text.begin(), text.end()));
  fail(ErrorCode::kNonFinite, "non-finite loss at step " + std::to_string(state.step) +
                                  "; diagnostics written to " + path.string());
}

}  // namespace

TrainResult run_training(TrainState state, const TrainConfig& config, const fs::path& out_dir,
                         const TrainControl& control) {
  config.validate();
  const auto manifest = read_manifest(config.dataset_dir);
  check_dataset(config, manifest);
  const auto pairs = load_train_pairs(config, manifest);
  const bool has_val = config.val_limit != 0 && manifest.splits.count("val") &&
                       !manifest.splits.at("val").empty();

  std::error_code ec;
  fs::create_directories(out_dir / "checkpoints", ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + out_dir.string() + ": " + ec.message());
  const auto metrics_path = out_dir / "metrics.jsonl";

  TrainResult result;
  const size_t n = pairs.size();
  const int batches_per_epoch =
      static_cast<int>((n + static_cast<size_t>(config.batch_size) - 1) / config.batch_size);
  auto grads = state.model.params().zeros_like();
  std::vector<Image> images;
  std::vector<FramePair> batch;

  auto save = [&](const fs::path& path) {
    write_checkpoint(path, checkpoint_from_state(state, config));
    result.checkpoint = path;
  };

  while (state.epoch < config.epochs) {
    const auto order = epoch_order(n, config.seed, state.epoch);
    while (state.batch_in_epoch < batches_per_epoch) {
      const size_t begin = static_cast<size_t>(state.batch_in_epoch) * config.batch_size;
      const size_t end = std::min(n, begin + static_cast<size_t>(config.batch_size));
      images.clear();
      images.reserve(2 * (end - begin));
      for (size_t i = begin; i < end; ++i) {
        images.push_back(png_to_image(pairs[order[i]].a));
        images.push_back(png_to_image(pairs[order[i]].b));
      }
      batch.clear();
      for (size_t i = 0; i < images.size(); i += 2) batch.push_back({&images[i], &images[i + 1]});

      zero_grads(grads);
      LossBreakdown loss;
      try {
        loss = total_loss(state.model, std::span<const FramePair>(batch), config.loss, &grads);
      } catch (const Error& e) {
        // Diverged parameters can surface as non-finite poses mid-forward.
        if (e.code() != ErrorCode::kNonFinite) throw;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        loss = {nan, nan, nan, nan};
      }
      if (!finite(loss)) abort_non_finite(out_dir, state, loss);
      state.optimizer.step(state.model.params(), grads);
      ++state.step;
      ++state.batch_in_epoch;
      state.accum.render += loss.render;
      state.accum.center += loss.center;
      state.accum.smooth += loss.smooth;
      state.accum.total += loss.total;
      ++state.accum.batches;

      if (config.log_every > 0 && state.step % config.log_every == 0) {
        const json line = {{"step", state.step}, {"epoch", state.epoch}, {"render", loss.render},
                           {"center", loss.center}, {"smooth", loss.smooth}, {"total", loss.total}};
        append_metric(metrics_path, line);
        result.metrics.push_back(line);
      }
      const bool stop = control.stop_at_step >= 0 && state.step >= control.stop_at_step;
      if ((config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) || stop) {
        save(out_dir / "checkpoints" / ("step_" + std::to_string(state.step) + ".ckpt"));
      }
      if (stop) {
        result.step = state.step;
        return result;
      }
    }

    const double inv = 1.0 / static_cast<double>(std::max<long>(1, state.accum.batches));
    json line = {{"step", state.step},
                 {"epoch", state.epoch},
                 {"render", state.accum.render * inv},
                 {"center", state.accum.center * inv},
                 {"smooth", state.accum.smooth * inv},
                 {"total", state.accum.total * inv}};
    if (has_val) {
      EvalOptions eo;
      eo.split = "val";
      eo.limit = config.val_limit;
      const auto report = evaluate(state.model, config.dataset_dir, eo);
      line["val_iou"] = report.amodal.overall;
      if (report.epe_pixels > 0) line["val_epe"] = report.epe;
    }
    append_metric(metrics_path, line);
    result.metrics.push_back(line);
    ++state.epoch;
    state.batch_in_epoch = 0;
    state.accum = {};
  }
  save(out_dir / "final.ckpt");
  result.step = state.step;
  result.completed = true;
  return result;
}

TrainResult train(const TrainConfig& config, const fs::path& out_dir, const TrainControl& control) {
  return run_training(fresh_train_state(config), config, out_dir, control);
}

}  // namespace flowparts
