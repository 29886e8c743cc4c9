#include "tff/filter.hpp"

#include <cmath>

namespace tff {

FilterState FilterState::initial(const NetConfig& cfg) {
  FilterState s;
  s.r_hat_prev = Tensor::zeros({cfg.encoder_channels, cfg.grid_height(), cfg.grid_width()});
  s.r_tilde_prev = Tensor::zeros({cfg.encoder_channels, cfg.grid_height(), cfg.grid_width()});
  s.h_motion = Tensor::zeros({cfg.motion_state_width});
  s.initialized = false;
  return s;
}

RigidTransform TauTensors::value() const {
  RigidTransform tau;
  for (int i = 0; i < 9; ++i) tau.R[i] = rotation.data()[i];
  for (int i = 0; i < 3; ++i) tau.T[i] = translation.data()[i];
  return tau;
}

TauTensors motion_head(const Tensor& h, ParameterStore& ps, const NetConfig& cfg,
                       const Fwd& f) {
  Tensor y = add(matmul(ps.p("head/fc0/W"), h), ps.p("head/fc0/b"));
  const bool current_stats = f.train || !f.bn_eval_running;
  y = batchnorm1d(y, ps.p("head/fc0/bn_g"), ps.p("head/fc0/bn_b"), ps.bn("head/fc0", 1),
                  current_stats, cfg.bn_eps, f.train ? cfg.bn_momentum : 0.0);
  y = relu(y);
  Tensor out = add(matmul(ps.p("head/fc1/W"), y), ps.p("head/fc1/b"));
  TauTensors tau;
  tau.translation = slice0(out, 0, 3);
  Tensor sines = clip(slice0(out, 3, 3), -1.0, 1.0);
  tau.rotation = rotation_tensor_from_sines(sines);
  return tau;
}

std::pair<Tensor, TauTensors> motion_step(const Tensor& h_prev, const Tensor& m_feat,
                                          ParameterStore& ps, const NetConfig& cfg,
                                          const Fwd& f) {
  check_arg(h_prev.shape() == Shape{cfg.motion_state_width}, "motion_step: bad state width");
  auto gate = [&](const char* k) {
    return sigmoid(add(add(matmul(ps.p(std::string("gru/Wm") + k), m_feat),
                           matmul(ps.p(std::string("gru/Wh") + k), h_prev)),
                       ps.p(std::string("gru/b") + k)));
  };
  Tensor o = gate("o");
  Tensor u = gate("u");
  Tensor c = sigmoid(add(add(matmul(ps.p("gru/Wmc"), m_feat),
                             mul(o, matmul(ps.p("gru/Whc"), h_prev))),
                         ps.p("gru/bc")));
  Tensor ones = Tensor::full({cfg.motion_state_width}, 1.0);
  Tensor h_new = add(mul(sub(ones, u), h_prev), mul(u, c));
  return {h_new, motion_head(h_new, ps, cfg, f)};
}

DepthMap depth_from_inverse(const Tensor& z_hat, double floor) {
  std::vector<double> d(z_hat.numel());
  const auto& z = z_hat.data();
  for (size_t i = 0; i < d.size(); ++i) d[i] = 1.0 / std::max(z[i], floor);
  return DepthMap{Tensor::from_data(z_hat.shape(), std::move(d))};
}

PredictResult predict(const FilterState& state, ParameterStore& ps, const NetConfig& cfg,
                      const CameraIntrinsics& image_K, const Fwd& f,
                      const std::optional<RigidTransform>& forced_tau) {
  check_arg(state.initialized, "predict: state not initialized");
  PredictResult res;
  RigidTransform tau;
  // Internal decodes run without tape, dropout, or buffer updates: the
  // prediction consumes the state, it does not train through it.
  Fwd pf = f;
  pf.train = false;
  if (forced_tau.has_value()) {
    tau = *forced_tau;
    res.tau.translation = Tensor::from_data({3}, {tau.T[0], tau.T[1], tau.T[2]});
    res.tau.rotation = Tensor::from_data({3, 3},
                                         std::vector<double>(tau.R.begin(), tau.R.end()));
  } else {
    NoGradScope no_grad;
    res.tau = motion_head(state.h_motion, ps, cfg, pf);
    tau = res.tau.value();
  }
  if (forced_tau.has_value() && tau.R == RigidTransform::identity().R &&
      tau.T == RigidTransform::identity().T) {
    // identity pose maps every pixel onto itself
    res.prediction.warped = state.r_hat_prev;
    res.prediction.validity =
        Tensor::full({1, cfg.grid_height(), cfg.grid_width()}, 1.0);
    return res;
  }
  Tensor z_prev;
  {
    NoGradScope no_grad;
    z_prev = decode_depth(state.r_hat_prev.detached(), ps, cfg, pf);
  }
  const DepthMap depth = depth_from_inverse(z_prev);
  res.prediction = project_warp(state.r_hat_prev, depth, tau,
                                image_K.scaled_down(cfg.downsample()));
  return res;
}

UpdateResult update(const WarpResult& prediction, const Tensor& r_tilde,
                    ParameterStore& ps, const NetConfig&, const Fwd&) {
  check_arg(prediction.warped.shape() == r_tilde.shape(),
            "update: prediction/encoding shape mismatch");
  Tensor pre = add(add(conv2d(prediction.warped, ps.p("gate/Whid"),
                              Tensor::zeros({1}), 1, 1),
                       conv2d(r_tilde, ps.p("gate/Win"), Tensor::zeros({1}), 1, 1)),
                   ps.p("gate/b"));
  UpdateResult res;
  res.gate = sigmoid(pre);
  Tensor ones = Tensor::full({1, r_tilde.dim(1), r_tilde.dim(2)}, 1.0);
  res.r_hat = add(mul(sub(ones, res.gate), prediction.warped), mul(res.gate, r_tilde));
  return res;
}

StepResult step(const FilterState& state, const Tensor& frame, ParameterStore& ps,
                const NetConfig& cfg, const CameraIntrinsics& image_K, const Fwd& f,
                const StepOptions& opt) {
  check_arg(frame.shape() == Shape({3, cfg.image_height, cfg.image_width}),
            "step: frame shape mismatch, got " + shape_str(frame.shape()));
  StepResult out;
  Tensor r_tilde = encode(frame, ps, cfg, f);

  if (!state.initialized) {
    out.r_hat = r_tilde;
    out.gate = Tensor::full({1, cfg.grid_height(), cfg.grid_width()}, 1.0);
    out.tau.translation = Tensor::zeros({3});
    out.tau.rotation = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  } else {
    // prediction first: it may only read the state
    PredictResult pred =
        predict(state, ps, cfg, image_K, f,
                opt.force_identity_motion
                    ? std::optional<RigidTransform>(RigidTransform::identity())
                    : std::nullopt);
    out.prediction = pred.prediction;
    out.used_prediction = true;

    if (opt.force_identity_motion) {
      out.tau = pred.tau;
      out.state.h_motion = state.h_motion;
    } else {
      Tensor pair = concat({state.r_tilde_prev, r_tilde}, 0);
      Tensor m_feat = decode_motion(pair, ps, cfg, f);
      m_feat = fuse_acceleration(m_feat, opt.accel, ps, cfg, f);
      auto [h_new, tau] = motion_step(state.h_motion, m_feat, ps, cfg, f);
      out.tau = tau;
      out.state.h_motion = h_new;
    }
    UpdateResult upd = update(pred.prediction, r_tilde, ps, cfg, f);
    out.r_hat = upd.r_hat;
    out.gate = upd.gate;
  }

  out.logits = decode_semantic(out.r_hat, ps, cfg, f);
  out.z_hat = decode_depth(out.r_hat, ps, cfg, f);
  out.state.r_hat_prev = out.r_hat;
  out.state.r_tilde_prev = r_tilde;
  if (!state.initialized) out.state.h_motion = state.h_motion;
  out.state.initialized = true;
  return out;
}

}  // namespace tff
