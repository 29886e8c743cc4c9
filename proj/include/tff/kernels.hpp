#pragma once

// Compute kernels behind the differentiable ops. Parallelized with OpenMP
// where the loop count pays for it; every output element is owned by
// exactly one iteration with a fixed inner accumulation order, so results
// are bit-identical for any thread count. tff::ref holds the serial
// reference implementations used by the tests and the benchmark.

namespace tff::kern {

struct Conv2dDims {
  int cin, h, w;        // input
  int cout, kh, kw;     // kernel
  int stride, pad;
  int oh, ow;           // output
};

// out[oc,y,x] = bias[oc] + sum_{ic,ky,kx} in * ker, accumulated in
// (ic,ky,kx) order.
void conv2d_forward(const double* in, const double* ker, const double* bias,
                    double* out, const Conv2dDims& d);

// Gather-form backward passes (race-free, deterministic).
void conv2d_backward_input(const double* dout, const double* ker, double* din,
                           const Conv2dDims& d);
void conv2d_backward_kernel(const double* dout, const double* in, double* dker,
                            const Conv2dDims& d);
void conv2d_backward_bias(const double* dout, double* dbias, const Conv2dDims& d);

// c[m,n] (+)= a[m,k] * b[k,n]; plain ascending-k accumulation.
void matmul_forward(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_backward_a(const double* dc, const double* b, double* da, int m, int k, int n);
void matmul_backward_b(const double* dc, const double* a, double* db, int m, int k, int n);

// Forward-splat transform pass: for every source pixel of an h*w grid,
// back-project with its depth, apply [R|T], re-project, round to the
// nearest pixel. target[i] = row-major target index or -1 when the pixel
// leaves the image or ends up at non-positive depth; zdepth[i] = the
// transformed camera depth.
void warp_transform_pass(const double* depth, int h, int w, const double* rot,
                         const double* trans, double fx, double fy, double cx,
                         double cy, int* target, double* zdepth);

}  // namespace tff::kern
