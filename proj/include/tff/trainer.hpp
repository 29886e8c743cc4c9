#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tff/networks.hpp"
#include "tff/synthdata.hpp"

namespace tff {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-4;
  int epochs = 1;
  int accum = 4;  // sequences per optimizer step
  uint64_t seed = 1;
  int max_steps_per_epoch = 0;   // 0 = full pass
  int motion_outage_frames = 5;  // blanked suffix during the motion stage
  bool static_halfnoise = true;  // half-image noise during update-pretrain
  NetConfig net;
};

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

struct OptimizerState {
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> moments;
  int64_t step = 0;
};

// Adam with bias correction and a decoupled (1 - lr*wd) multiplier on
// weight matrices (names whose leaf starts with 'W'); biases, batchnorm
// affines and loss scalars do not decay.
void adam_step(ParameterStore& ps, const std::vector<std::string>& trainable,
               OptimizerState& opt, const TrainConfig& cfg);

bool decays(const std::string& param_name);

// Parameter names a stage updates; everything else stays frozen (bitwise).
std::vector<std::string> stage_trainable(const std::string& stage,
                                         const ParameterStore& ps);

struct StageMetrics {
  std::vector<std::string> log_lines;  // one JSON object per epoch
  double first_epoch_loss = 0;
  double last_epoch_loss = 0;
};

// Stages: "baseline" (unfiltered multi-task model on frame pairs),
// "motion-pretrain" (motion branch only, encoder frozen, blanked suffix),
// "update-pretrain" (gate + encoder on static sequences, identity motion,
// decoders frozen), "finetune" (everything, full unroll).
StageMetrics train_stage(const std::string& stage, const std::string& data_dir,
                         ParameterStore& ps, const TrainConfig& cfg,
                         std::ostream* metrics_log);

struct GradCheckReport {
  double max_rel_err = 0;
  int64_t checked = 0;
  bool pass = false;
};

// Central finite differences against the taped gradients. The closure
// must be deterministic (re-seed any rng it uses internally); elements
// are subsampled per leaf when max_per_leaf > 0.
GradCheckReport grad_check(const std::function<Tensor()>& closure,
                           const std::vector<Tensor>& leaves, double tolerance,
                           double fd_step = 1e-5, int max_per_leaf = 0,
                           uint64_t select_seed = 0);

}  // namespace tff
