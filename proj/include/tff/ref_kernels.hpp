#pragma once

// Serial reference implementations, kept deliberately independent of the
// OpenMP kernels: plain nested loops, and the warp goes through explicit
// 4x4 homogeneous matrices with a standalone z-buffer loop. Tests compare
// the production kernels against these; the benchmark measures both.

#include <vector>

#include "tff/geometry.hpp"
#include "tff/kernels.hpp"

namespace tff::ref {

void conv2d_forward(const double* in, const double* ker, const double* bias,
                    double* out, const kern::Conv2dDims& d);
void conv2d_backward_input(const double* dout, const double* ker, double* din,
                           const kern::Conv2dDims& d);
void conv2d_backward_kernel(const double* dout, const double* in, double* dker,
                            const kern::Conv2dDims& d);

void matmul_forward(const double* a, const double* b, double* c, int m, int k, int n);

struct WarpRef {
  std::vector<double> warped;    // [C,H,W]
  std::vector<double> validity;  // [H,W]
};

WarpRef project_warp(const std::vector<double>& features, int c, int h, int w,
                     const std::vector<double>& depth, const RigidTransform& tau,
                     const CameraIntrinsics& K);

}  // namespace tff::ref
