#pragma once

#include <vector>

#include "tff/tensor.hpp"
#include "tff/util.hpp"

namespace tff {

// Elementwise ops accept equal shapes or a scalar (numel==1) on either
// side; mul additionally broadcasts a [1,h,w] map across the channels of
// a [C,h,w] tensor. No other broadcasting exists.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor clip(const Tensor& x, double lo, double hi);
Tensor softmax(const Tensor& x, int axis);

// Reductions over all elements, plain left-to-right accumulation.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// a[m,k] x b[k,n] -> [m,n]; a[m,k] x b[k] -> [m].
Tensor matmul(const Tensor& a, const Tensor& b);

// Cross-correlation, zero padding, H' = (H + 2 pad - kh)/stride + 1.
// Accumulation order is bias then ascending (ic,ky,kx).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

struct BnStats {
  std::vector<double> mean;
  std::vector<double> var;
  static BnStats make(int channels) {
    return BnStats{std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
};

// Per-channel statistics over the spatial extent in train mode (updating
// the running buffers), running statistics in eval mode.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BnStats& running, bool train, double eps = 1e-5,
                   double momentum = 0.1);

// Single-vector variant: statistics over the whole vector (scalar running
// buffers), per-element affine.
Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BnStats& running, bool train, double eps = 1e-5,
                   double momentum = 0.1);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor slice0(const Tensor& x, int start, int len);

Tensor avgpool2d(const Tensor& x, int k);
Tensor upsample_nearest2d(const Tensor& x, int factor);

// Inverted dropout; identity in eval mode.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool train);

}  // namespace tff
