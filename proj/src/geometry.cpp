#include "tff/geometry.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "tff/kernels.hpp"
#include "tff/util.hpp"

namespace tff {

void CameraIntrinsics::validate() const {
  check_arg(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive");
  check_arg(cx >= 0 && cx < width && cy >= 0 && cy < height,
            "intrinsics: principal point outside the image");
}

bool RigidTransform::is_valid_rotation(double tol) const {
  // R^T R == I
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += R[k * 3 + i] * R[k * 3 + j];
      if (std::fabs(dot - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  const double det = R[0] * (R[4] * R[8] - R[5] * R[7]) -
                     R[1] * (R[3] * R[8] - R[5] * R[6]) +
                     R[2] * (R[3] * R[7] - R[4] * R[6]);
  return std::fabs(det - 1.0) <= tol;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform c;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += a.R[i * 3 + k] * b.R[k * 3 + j];
      c.R[i * 3 + j] = acc;
    }
  for (int i = 0; i < 3; ++i)
    c.T[i] = a.R[i * 3] * b.T[0] + a.R[i * 3 + 1] * b.T[1] + a.R[i * 3 + 2] * b.T[2] + a.T[i];
  return c;
}

RigidTransform invert(const RigidTransform& a) {
  RigidTransform inv;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv.R[i * 3 + j] = a.R[j * 3 + i];
  for (int i = 0; i < 3; ++i)
    inv.T[i] = -(inv.R[i * 3] * a.T[0] + inv.R[i * 3 + 1] * a.T[1] + inv.R[i * 3 + 2] * a.T[2]);
  return inv;
}

std::array<double, 9> rotation_from_sines(double sa, double sb, double sc) {
  const double ca = std::sqrt(std::max(0.0, 1.0 - sa * sa));
  const double cb = std::sqrt(std::max(0.0, 1.0 - sb * sb));
  const double cc = std::sqrt(std::max(0.0, 1.0 - sc * sc));
  return {cc * cb, -sc * ca + cc * sb * sa, sc * sa + cc * sb * ca,
          sc * cb, cc * ca + sc * sb * sa,  -cc * sa + sc * sb * ca,
          -sb,     cb * sa,                 cb * ca};
}

Tensor rotation_tensor_from_sines(const Tensor& sines) {
  check_arg(sines.shape() == Shape{3}, "rotation_tensor_from_sines: input must be [3]");
  const double sa = sines.data()[0], sb = sines.data()[1], sc = sines.data()[2];
  check_arg(std::fabs(sa) <= 1 && std::fabs(sb) <= 1 && std::fabs(sc) <= 1,
            "rotation_tensor_from_sines: sines outside [-1,1]");
  auto r = rotation_from_sines(sa, sb, sc);
  Tensor y = Tensor::from_data({3, 3}, std::vector<double>(r.begin(), r.end()));
  auto sn = sines.node(), yn = y.node();
  if (grad_enabled({sn})) {
    y.set_requires_grad(true);
    Tape::active()->record({sn}, yn, [sn, yn, sa, sb, sc]() {
      const double ca = std::sqrt(std::max(0.0, 1.0 - sa * sa));
      const double cb = std::sqrt(std::max(0.0, 1.0 - sb * sb));
      const double cc = std::sqrt(std::max(0.0, 1.0 - sc * sc));
      const double da = -sa / std::max(ca, 1e-12);  // d(cos)/d(sin)
      const double db = -sb / std::max(cb, 1e-12);
      const double dc = -sc / std::max(cc, 1e-12);
      // d R / d sa
      const double Ja[9] = {0, -sc * da + cc * sb, sc + cc * sb * da,
                            0, cc * da + sc * sb,  -cc + sc * sb * da,
                            0, cb,                 cb * da};
      // d R / d sb
      const double Jb[9] = {cc * db, cc * sa, cc * ca,
                            sc * db, sc * sa, sc * ca,
                            -1,      db * sa, db * ca};
      // d R / d sc (bottom row has no sc dependence)
      const double Jc[9] = {dc * cb, -ca + dc * sb * sa, sa + dc * sb * ca,
                            cb,      dc * ca + sb * sa,  -dc * sa + sb * ca,
                            0,       0,                  0};
      sn->ensure_grad();
      for (int i = 0; i < 9; ++i) {
        const double g = yn->grad[i];
        sn->grad[0] += g * Ja[i];
        sn->grad[1] += g * Jb[i];
        sn->grad[2] += g * Jc[i];
      }
    });
  }
  return y;
}

double translation_error(const RigidTransform& pred, const RigidTransform& gt) {
  const std::array<double, 3> u = {gt.T[0] - pred.T[0], gt.T[1] - pred.T[1],
                                   gt.T[2] - pred.T[2]};
  double err = 0;
  for (int j = 0; j < 3; ++j) {
    // row j of R^T = column j of R
    const double v = pred.R[j] * u[0] + pred.R[3 + j] * u[1] + pred.R[6 + j] * u[2];
    err += v * v;
  }
  return err;
}

double rotation_error(const RigidTransform& pred, const RigidTransform& gt) {
  // trace(inv(pred) * gt) with inv = transpose
  double trace = 0;
  for (int i = 0; i < 3; ++i) {
    double m = 0;
    for (int k = 0; k < 3; ++k) m += pred.R[k * 3 + i] * gt.R[k * 3 + i];
    trace += m;
  }
  const double arg = std::min(1.0, std::max(-1.0, (trace - 1.0) / 2.0));
  return std::acos(arg);
}

WarpResult project_warp(const Tensor& features, const DepthMap& depth,
                        const RigidTransform& tau, const CameraIntrinsics& K) {
  check_arg(features.shape().size() == 3, "project_warp: features must be [C,H,W]");
  const int c = features.dim(0), h = features.dim(1), w = features.dim(2);
  check_arg(depth.values.shape() == Shape{1, h, w},
            "project_warp: depth shape must match features");
  check_arg(K.width == w && K.height == h, "project_warp: intrinsics size mismatch");
  K.validate();
  const auto& dv = depth.values.data();
  for (double d : dv)
    check_arg(d > 0.0, "project_warp: non-positive source depth");

  const int64_t n = (int64_t)h * w;
  std::vector<int> target(n);
  std::vector<double> zdepth(n);
  kern::warp_transform_pass(dv.data(), h, w, tau.R.data(), tau.T.data(), K.fx, K.fy,
                            K.cx, K.cy, target.data(), zdepth.data());

  // z-buffer, sequential: strict < keeps the first row-major source on ties
  auto winner = std::make_shared<std::vector<int>>(n, -1);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  for (int64_t i = 0; i < n; ++i) {
    const int t = target[i];
    if (t < 0) continue;
    if (zdepth[i] < best[t]) {
      best[t] = zdepth[i];
      (*winner)[t] = (int)i;
    }
  }

  std::vector<double> warped((int64_t)c * n, 0.0);
  std::vector<double> valid(n, 0.0);
  const auto& fv = features.data();
#pragma omp parallel for if (n * c > 4096)
  for (int64_t t = 0; t < n; ++t) {
    const int s = (*winner)[t];
    if (s < 0) continue;
    valid[t] = 1.0;
    for (int ci = 0; ci < c; ++ci) warped[ci * n + t] = fv[ci * n + s];
  }

  WarpResult res;
  res.warped = Tensor::from_data({c, h, w}, std::move(warped));
  res.validity = Tensor::from_data({1, h, w}, std::move(valid));
  auto fn = features.node(), on = res.warped.node();
  if (grad_enabled({fn})) {
    res.warped.set_requires_grad(true);
    Tape::active()->record({fn}, on, [fn, on, winner, c, n]() {
      fn->ensure_grad();
      // each source wins at most one target, so writes are disjoint
      for (int64_t t = 0; t < n; ++t) {
        const int s = (*winner)[t];
        if (s < 0) continue;
        for (int ci = 0; ci < c; ++ci) fn->grad[ci * n + s] += on->grad[ci * n + t];
      }
    });
  }
  return res;
}

}  // namespace tff
