#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "checkpoint.hpp"
#include "losses.hpp"
#include "model.hpp"

namespace flowparts {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 150;
  int batch_size = 64;
  ModelConfig model;  // K and C live here
  LossOptions loss;
  uint64_t seed = 0;
  std::filesystem::path dataset_dir;
  int checkpoint_every = 0;  // steps; 0 = final checkpoint only
  int log_every = 0;         // steps; 0 = per-epoch lines only
  int train_limit = -1;      // < 0: whole train split
  int val_limit = -1;        // < 0: whole val split; 0 disables validation
  bool deterministic = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& config);

class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet<float>& params, double lr, double beta1, double beta2, double eps);

  void step(ParamSet<float>& params, const GradSet<float>& grads);
  long steps() const { return t_; }

  GradSet<float>& first_moment() { return m_; }
  GradSet<float>& second_moment() { return v_; }
  const GradSet<float>& first_moment() const { return m_; }
  const GradSet<float>& second_moment() const { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  double lr_ = 1e-4;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  GradSet<float> m_;
  GradSet<float> v_;
};

struct EpochAccumulator {
  double render = 0.0;
  double center = 0.0;
  double smooth = 0.0;
  double total = 0.0;
  long batches = 0;
};

struct TrainState {
  FlowCapsuleModel<float> model;
  Adam optimizer;
  long step = 0;
  int epoch = 0;            // epoch currently in progress
  int batch_in_epoch = 0;   // next batch to run within `epoch`
  EpochAccumulator accum;
};

// Test hook: stop (after writing a checkpoint) once `step` reaches this value.
struct TrainControl {
  long stop_at_step = -1;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::vector<nlohmann::json> metrics;
  long step = 0;
  bool completed = false;
};

TrainState fresh_train_state(const TrainConfig& config);
TrainState resume(const std::filesystem::path& checkpoint, const TrainConfig& config);
Checkpoint checkpoint_from_state(const TrainState& state, const TrainConfig& config);

TrainResult run_training(TrainState state, const TrainConfig& config,
                         const std::filesystem::path& out_dir, const TrainControl& control = {});
TrainResult train(const TrainConfig& config, const std::filesystem::path& out_dir,
                  const TrainControl& control = {});

}  // namespace flowparts
