#include "tff/ref_kernels.hpp"

#include <cmath>
#include <limits>

namespace tff::ref {

void conv2d_forward(const double* in, const double* ker, const double* bias,
                    double* out, const kern::Conv2dDims& d) {
  for (int oc = 0; oc < d.cout; ++oc)
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) {
        double acc = bias ? bias[oc] : 0.0;
        for (int ic = 0; ic < d.cin; ++ic)
          for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
              const int iy = oy * d.stride - d.pad + ky;
              const int ix = ox * d.stride - d.pad + kx;
              if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
              acc += in[((long)ic * d.h + iy) * d.w + ix] *
                     ker[(((long)oc * d.cin + ic) * d.kh + ky) * d.kw + kx];
            }
        out[((long)oc * d.oh + oy) * d.ow + ox] = acc;
      }
}

void conv2d_backward_input(const double* dout, const double* ker, double* din,
                           const kern::Conv2dDims& d) {
  for (int oc = 0; oc < d.cout; ++oc)
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) {
        const double g = dout[((long)oc * d.oh + oy) * d.ow + ox];
        for (int ic = 0; ic < d.cin; ++ic)
          for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
              const int iy = oy * d.stride - d.pad + ky;
              const int ix = ox * d.stride - d.pad + kx;
              if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
              din[((long)ic * d.h + iy) * d.w + ix] +=
                  g * ker[(((long)oc * d.cin + ic) * d.kh + ky) * d.kw + kx];
            }
      }
}

void conv2d_backward_kernel(const double* dout, const double* in, double* dker,
                            const kern::Conv2dDims& d) {
  for (int oc = 0; oc < d.cout; ++oc)
    for (int oy = 0; oy < d.oh; ++oy)
      for (int ox = 0; ox < d.ow; ++ox) {
        const double g = dout[((long)oc * d.oh + oy) * d.ow + ox];
        for (int ic = 0; ic < d.cin; ++ic)
          for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
              const int iy = oy * d.stride - d.pad + ky;
              const int ix = ox * d.stride - d.pad + kx;
              if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
              dker[(((long)oc * d.cin + ic) * d.kh + ky) * d.kw + kx] +=
                  g * in[((long)ic * d.h + iy) * d.w + ix];
            }
      }
}

void matmul_forward(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[(long)i * k + p] * b[(long)p * n + j];
      c[(long)i * n + j] += acc;
    }
}

namespace {

using Mat4 = std::array<double, 16>;

Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += a[i * 4 + k] * b[k * 4 + j];
      c[i * 4 + j] = acc;
    }
  return c;
}

std::array<double, 4> mat4_apply(const Mat4& m, const std::array<double, 4>& v) {
  std::array<double, 4> r{};
  for (int i = 0; i < 4; ++i) {
    double acc = 0;
    for (int k = 0; k < 4; ++k) acc += m[i * 4 + k] * v[k];
    r[i] = acc;
  }
  return r;
}

}  // namespace

WarpRef project_warp(const std::vector<double>& features, int c, int h, int w,
                     const std::vector<double>& depth, const RigidTransform& tau,
                     const CameraIntrinsics& K) {
  // K and K^-1 embedded as 4x4 homogeneous matrices
  Mat4 Kh{K.fx, 0, K.cx, 0, 0, K.fy, K.cy, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  Mat4 Kinv{1.0 / K.fx, 0, -K.cx / K.fx, 0, 0, 1.0 / K.fy, -K.cy / K.fy, 0,
            0,          0, 1,            0, 0, 0,          0,            1};
  Mat4 Th{tau.R[0], tau.R[1], tau.R[2], tau.T[0], tau.R[3], tau.R[4], tau.R[5], tau.T[1],
          tau.R[6], tau.R[7], tau.R[8], tau.T[2], 0,        0,        0,        1};
  const Mat4 M = mat4_mul(Kh, Th);

  const long n = (long)h * w;
  WarpRef out;
  out.warped.assign((long)c * n, 0.0);
  out.validity.assign(n, 0.0);

  std::vector<int> winner(n, -1);
  std::vector<double> zbuf(n, std::numeric_limits<double>::infinity());
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const long i = (long)v * w + u;
      const double d = depth[i];
      // homogeneous pixel scaled by depth, through K^-1 then [K | t]
      const auto ray = mat4_apply(Kinv, {(double)u, (double)v, 1.0, 0.0});
      const auto p = mat4_apply(M, {ray[0] * d, ray[1] * d, ray[2] * d, 1.0});
      const double zt = p[2];
      if (zt <= 0.0) continue;
      const long ut = std::lround(p[0] / zt);
      const long vt = std::lround(p[1] / zt);
      if (ut < 0 || ut >= w || vt < 0 || vt >= h) continue;
      const long t = vt * w + ut;
      if (zt < zbuf[t]) {
        zbuf[t] = zt;
        winner[t] = (int)i;
      }
    }
  for (long t = 0; t < n; ++t) {
    if (winner[t] < 0) continue;
    out.validity[t] = 1.0;
    for (int ci = 0; ci < c; ++ci) out.warped[(long)ci * n + t] = features[(long)ci * n + winner[t]];
  }
  return out;
}

}  // namespace tff::ref
