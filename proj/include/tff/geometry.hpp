#pragma once

#include <array>

#include "tff/tensor.hpp"

namespace tff {

// Pinhole camera, x right / y down / z forward; pixel (u,v) = (column, row).
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  static CameraIntrinsics defaults(int width, int height) {
    return {width / 2.0, width / 2.0, (width - 1) / 2.0, (height - 1) / 2.0, width, height};
  }
  // Intrinsics of the grid obtained by an integer downsampling of the
  // image, pixel centers kept aligned.
  CameraIntrinsics scaled_down(int factor) const {
    CameraIntrinsics k;
    k.fx = fx / factor;
    k.fy = fy / factor;
    k.cx = (cx - (factor - 1) / 2.0) / factor;
    k.cy = (cy - (factor - 1) / 2.0) / factor;
    k.width = width / factor;
    k.height = height / factor;
    return k;
  }
  void validate() const;
};

// Rotation stored row-major.
struct RigidTransform {
  std::array<double, 9> R{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> T{0, 0, 0};

  static RigidTransform identity() { return {}; }
  std::array<double, 3> apply(const std::array<double, 3>& p) const {
    return {R[0] * p[0] + R[1] * p[1] + R[2] * p[2] + T[0],
            R[3] * p[0] + R[4] * p[1] + R[5] * p[2] + T[1],
            R[6] * p[0] + R[7] * p[1] + R[8] * p[2] + T[2]};
  }
  bool is_valid_rotation(double tol = 1e-9) const;
};

// compose(a,b) applies b first: result(p) = a(b(p)).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& a);

// Angles are the arcsines of the inputs; composed R = Rz(c)*Ry(b)*Rx(a).
std::array<double, 9> rotation_from_sines(double sa, double sb, double sc);

// Same map as a taped op: sines [3] -> rotation [3,3].
Tensor rotation_tensor_from_sines(const Tensor& sines);

// || inv(R_hat) (T - T_hat) ||^2
double translation_error(const RigidTransform& pred, const RigidTransform& gt);
// arccos of the clamped trace identity, radians.
double rotation_error(const RigidTransform& pred, const RigidTransform& gt);

struct DepthMap {
  Tensor values;  // [1,H,W], all positive
};

struct WarpResult {
  Tensor warped;    // [C,H,W]; zero where validity is zero
  Tensor validity;  // [1,H,W] of {0,1}; never on a tape
};

// Forward-splat of the source features into the target view: back-project
// each source pixel with its depth, transform by tau, re-project, round to
// the nearest pixel. Collisions resolve to the source with the smaller
// transformed depth (ties: first source in row-major order). Differentiable
// with respect to features only; the winner assignment is a constant
// during backward.
WarpResult project_warp(const Tensor& features, const DepthMap& depth,
                        const RigidTransform& tau, const CameraIntrinsics& K);

}  // namespace tff
