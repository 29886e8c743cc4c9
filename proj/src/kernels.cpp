#include "tff/kernels.hpp"

#include <cmath>

namespace tff::kern {

namespace {
// Parallelizing tiny loops costs more than it buys; gate on total work.
constexpr long kParallelThreshold = 16 * 1024;
}

void conv2d_forward(const double* in, const double* ker, const double* bias,
                    double* out, const Conv2dDims& d) {
  const long work = (long)d.cout * d.oh * d.ow * d.cin * d.kh * d.kw;
#pragma omp parallel for collapse(2) if (work > kParallelThreshold)
  for (int oc = 0; oc < d.cout; ++oc) {
    for (int oy = 0; oy < d.oh; ++oy) {
      for (int ox = 0; ox < d.ow; ++ox) {
        double acc = bias ? bias[oc] : 0.0;
        for (int ic = 0; ic < d.cin; ++ic) {
          for (int ky = 0; ky < d.kh; ++ky) {
            const int iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (int kx = 0; kx < d.kw; ++kx) {
              const int ix = ox * d.stride - d.pad + kx;
              if (ix < 0 || ix >= d.w) continue;
              acc += in[((long)ic * d.h + iy) * d.w + ix] *
                     ker[(((long)oc * d.cin + ic) * d.kh + ky) * d.kw + kx];
            }
          }
        }
        out[((long)oc * d.oh + oy) * d.ow + ox] = acc;
      }
    }
  }
}

void conv2d_backward_input(const double* dout, const double* ker, double* din,
                           const Conv2dDims& d) {
  const long work = (long)d.cin * d.h * d.w * d.cout * d.kh * d.kw;
  // descending kernel offsets visit (oy,ox) ascending, the same
  // accumulation order as the serial scatter form
#pragma omp parallel for collapse(2) if (work > kParallelThreshold)
  for (int ic = 0; ic < d.cin; ++ic) {
    for (int iy = 0; iy < d.h; ++iy) {
      for (int ix = 0; ix < d.w; ++ix) {
        double acc = 0.0;
        for (int oc = 0; oc < d.cout; ++oc) {
          for (int ky = d.kh - 1; ky >= 0; --ky) {
            const int ny = iy + d.pad - ky;
            if (ny < 0 || ny % d.stride != 0) continue;
            const int oy = ny / d.stride;
            if (oy >= d.oh) continue;
            for (int kx = d.kw - 1; kx >= 0; --kx) {
              const int nx = ix + d.pad - kx;
              if (nx < 0 || nx % d.stride != 0) continue;
              const int ox = nx / d.stride;
              if (ox >= d.ow) continue;
              acc += dout[((long)oc * d.oh + oy) * d.ow + ox] *
                     ker[(((long)oc * d.cin + ic) * d.kh + ky) * d.kw + kx];
            }
          }
        }
        din[((long)ic * d.h + iy) * d.w + ix] += acc;
      }
    }
  }
}

void conv2d_backward_kernel(const double* dout, const double* in, double* dker,
                            const Conv2dDims& d) {
  const long work = (long)d.cout * d.cin * d.kh * d.kw * d.oh * d.ow;
#pragma omp parallel for collapse(2) if (work > kParallelThreshold)
  for (int oc = 0; oc < d.cout; ++oc) {
    for (int ic = 0; ic < d.cin; ++ic) {
      for (int ky = 0; ky < d.kh; ++ky) {
        for (int kx = 0; kx < d.kw; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy * d.stride - d.pad + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (int ox = 0; ox < d.ow; ++ox) {
              const int ix = ox * d.stride - d.pad + kx;
              if (ix < 0 || ix >= d.w) continue;
              acc += dout[((long)oc * d.oh + oy) * d.ow + ox] *
                     in[((long)ic * d.h + iy) * d.w + ix];
            }
          }
          dker[(((long)oc * d.cin + ic) * d.kh + ky) * d.kw + kx] += acc;
        }
      }
    }
  }
}

void conv2d_backward_bias(const double* dout, double* dbias, const Conv2dDims& d) {
  for (int oc = 0; oc < d.cout; ++oc) {
    double acc = 0.0;
    const double* p = dout + (long)oc * d.oh * d.ow;
    for (long i = 0; i < (long)d.oh * d.ow; ++i) acc += p[i];
    dbias[oc] += acc;
  }
}

void matmul_forward(const double* a, const double* b, double* c, int m, int k, int n) {
  const long work = (long)m * k * n;
#pragma omp parallel for if (work > kParallelThreshold)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[(long)i * k + p] * b[(long)p * n + j];
      c[(long)i * n + j] += acc;
    }
  }
}

void matmul_backward_a(const double* dc, const double* b, double* da, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += dc[(long)i * n + j] * b[(long)p * n + j];
      da[(long)i * k + p] += acc;
    }
}

void matmul_backward_b(const double* dc, const double* a, double* db, int m, int k, int n) {
  for (int p = 0; p < k; ++p)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int i = 0; i < m; ++i) acc += a[(long)i * k + p] * dc[(long)i * n + j];
      db[(long)p * n + j] += acc;
    }
}

void warp_transform_pass(const double* depth, int h, int w, const double* rot,
                         const double* trans, double fx, double fy, double cx,
                         double cy, int* target, double* zdepth) {
  const long work = (long)h * w * 32;
#pragma omp parallel for if (work > kParallelThreshold)
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const long i = (long)v * w + u;
      const double d = depth[i];
      const double X = (u - cx) / fx * d;
      const double Y = (v - cy) / fy * d;
      const double Z = d;
      const double Xt = rot[0] * X + rot[1] * Y + rot[2] * Z + trans[0];
      const double Yt = rot[3] * X + rot[4] * Y + rot[5] * Z + trans[1];
      const double Zt = rot[6] * X + rot[7] * Y + rot[8] * Z + trans[2];
      zdepth[i] = Zt;
      if (Zt <= 0.0) {
        target[i] = -1;
        continue;
      }
      const long ut = std::lround(fx * Xt / Zt + cx);
      const long vt = std::lround(fy * Yt / Zt + cy);
      if (ut < 0 || ut >= w || vt < 0 || vt >= h) {
        target[i] = -1;
        continue;
      }
      target[i] = (int)(vt * w + ut);
    }
  }
}

}  // namespace tff::kern
