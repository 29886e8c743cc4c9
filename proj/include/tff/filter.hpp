#pragma once

#include <optional>

#include "tff/geometry.hpp"
#include "tff/networks.hpp"

namespace tff {

// Recurrent state: filtered features, the previous raw encoding, and the
// low-dimensional motion vector. Zeros before the first frame.
struct FilterState {
  Tensor r_hat_prev;
  Tensor r_tilde_prev;
  Tensor h_motion;
  bool initialized = false;

  static FilterState initial(const NetConfig& cfg);
};

// Pose estimate kept on the tape so the motion losses can reach the head.
struct TauTensors {
  Tensor translation;  // [3]
  Tensor rotation;     // [3,3]
  RigidTransform value() const;
};

// Decodes a pose from a motion state vector: 128-wide fc + batchnorm +
// relu, then a linear 6-vector; translation raw, sines clipped to [-1,1].
TauTensors motion_head(const Tensor& h, ParameterStore& ps, const NetConfig& cfg,
                       const Fwd& f);

// One gated-recurrent-unit step over motion features followed by the pose
// head on the new state.
std::pair<Tensor, TauTensors> motion_step(const Tensor& h_prev, const Tensor& m_feat,
                                          ParameterStore& ps, const NetConfig& cfg,
                                          const Fwd& f);

struct PredictResult {
  WarpResult prediction;  // warped filtered features
  TauTensors tau;         // pose used by the warp
};

// Propagates the filtered features into the current view: depth decoded
// from the stored state, pose decoded from the stored motion vector. Reads
// nothing from the current frame, so the result is bitwise independent of
// it. forced_tau substitutes the decoded pose (the static experiments pin
// the identity).
PredictResult predict(const FilterState& state, ParameterStore& ps,
                      const NetConfig& cfg, const CameraIntrinsics& image_K,
                      const Fwd& f,
                      const std::optional<RigidTransform>& forced_tau = {});

// Per-pixel gate from prediction and encoding; output blends the two.
struct UpdateResult {
  Tensor r_hat;
  Tensor gate;  // [1,h,w] in (0,1)
};
UpdateResult update(const WarpResult& prediction, const Tensor& r_tilde,
                    ParameterStore& ps, const NetConfig& cfg, const Fwd& f);

struct StepOptions {
  std::optional<std::array<double, 3>> accel;
  bool force_identity_motion = false;
};

struct StepResult {
  FilterState state;
  Tensor r_hat;
  Tensor z_hat;       // inverse depth decoded from r_hat
  TauTensors tau;     // motion estimate for the (t-1, t) pair
  Tensor gate;        // ones on the first frame
  Tensor logits;      // [K,H,W]
  WarpResult prediction;  // empty tensors on the first frame
  bool used_prediction = false;
};

// Full filter step. First frame passes the encoding through (gate pinned
// to one, identity pose); later frames run predict / update and advance
// the motion filter on the encoding pair.
StepResult step(const FilterState& state, const Tensor& frame, ParameterStore& ps,
                const NetConfig& cfg, const CameraIntrinsics& image_K, const Fwd& f,
                const StepOptions& opt = {});

// 1 / max(z, floor) as plain values, detached from any tape.
DepthMap depth_from_inverse(const Tensor& z_hat, double floor = 1e-3);

}  // namespace tff
