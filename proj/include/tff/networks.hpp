#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tff/ops.hpp"
#include "tff/tensor.hpp"
#include "tff/util.hpp"

namespace tff {

struct NetConfig {
  int image_height = 32;
  int image_width = 32;
  std::vector<int> encoder_widths{16, 32};  // one stride-2 stage per entry
  int encoder_channels = 32;                // trunk / filtered representation C
  std::vector<int> psp_kernels{8, 4, 2};
  int psp_features = 32;
  int sem_width = 32;
  int depth_width = 64;
  std::vector<int> motion_conv_widths{64, 128, 128};
  int motion_feature_width = 128;
  int motion_state_width = 128;  // must equal motion_feature_width for the
                                 // shared pose head of the pair baseline
  int head_hidden = 128;
  int class_count = 6;
  double dropout_p = 0.1;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  // Per-sample statistics at inference by default; flip to normalize with
  // the tracked running stats instead.
  bool eval_use_running_stats = false;

  int downsample() const { return 1 << (int)encoder_widths.size(); }
  int grid_height() const { return image_height / downsample(); }
  int grid_width() const { return image_width / downsample(); }
  void validate() const;
};

// Named parameters (on the tape) plus named non-trainable buffers
// (batchnorm running statistics). Registration order is fixed so that
// seeded initialization is reproducible.
struct ParameterStore {
  std::vector<std::string> order;
  std::map<std::string, Tensor> params;
  std::map<std::string, BnStats> stats;

  Tensor& add(const std::string& name, Tensor t) {
    check_arg(!params.count(name), "duplicate parameter " + name);
    order.push_back(name);
    t.set_requires_grad(true);
    return params.emplace(name, std::move(t)).first->second;
  }
  Tensor& p(const std::string& name) {
    auto it = params.find(name);
    check_arg(it != params.end(), "unknown parameter " + name);
    return it->second;
  }
  const Tensor& p(const std::string& name) const {
    auto it = params.find(name);
    check_arg(it != params.end(), "unknown parameter " + name);
    return it->second;
  }
  BnStats& bn(const std::string& name, int channels) {
    auto it = stats.find(name);
    if (it == stats.end()) it = stats.emplace(name, BnStats::make(channels)).first;
    return it->second;
  }
  void zero_grads() {
    for (auto& [name, t] : params) t.zero_grad();
  }
};

// Forward-pass context: training toggles dropout and batchnorm statistic
// updates; rng drives dropout masks.
struct Fwd {
  bool train = false;
  Rng* rng = nullptr;
  bool bn_eval_running = false;  // from NetConfig::eval_use_running_stats
};

void init_model_params(ParameterStore& store, const NetConfig& cfg, Rng& rng);

Tensor encode(const Tensor& x, ParameterStore& ps, const NetConfig& cfg, const Fwd& f);
Tensor decode_semantic(const Tensor& r, ParameterStore& ps, const NetConfig& cfg, const Fwd& f);
Tensor decode_depth(const Tensor& r, ParameterStore& ps, const NetConfig& cfg, const Fwd& f);
Tensor decode_motion(const Tensor& pair, ParameterStore& ps, const NetConfig& cfg, const Fwd& f);
Tensor fuse_acceleration(const Tensor& motion_features,
                         const std::optional<std::array<double, 3>>& accel,
                         ParameterStore& ps, const NetConfig& cfg, const Fwd& f);

// Checkpoint directory: manifest.json plus one tensor file per parameter
// and buffer; load/save round-trips bit-exactly.
void save_checkpoint(const std::string& dir, const ParameterStore& store,
                     const NetConfig& cfg);
NetConfig load_checkpoint(const std::string& dir, ParameterStore& store);

NetConfig net_config_from_json(const std::string& text);
std::string net_config_to_json(const NetConfig& cfg);

}  // namespace tff
