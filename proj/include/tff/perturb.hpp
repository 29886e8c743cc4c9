#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tff/tensor.hpp"

namespace tff {

struct ClutterKernel {
  double cx = 0, cy = 0;  // pixels, continuous
  double sx = 0, sy = 0;  // per-axis std, pixels
};

// Fully determines the corruption of one sequence.
struct PerturbationSpec {
  double noise_variance = 0;           // in [0, 0.001]
  int clutter_kernel_count = 0;        // in {0..8}
  std::vector<ClutterKernel> clutter_kernels;
  int lighting_frame_index = 0;
  double lighting_scale = 0;           // in [0.5, 1.0]
  int lighting_sign = 1;               // +1 or -1
  uint64_t seed = 0;                   // drives the per-frame noise
};

PerturbationSpec sample_spec(uint64_t seed, int width, int height, int frame_count);

// Sum of per-kernel anisotropic Gaussians, each peaking at one and
// truncated at three stds per axis; the sum is clipped to [0,1].
Tensor build_clutter_mask(const PerturbationSpec& spec, int h, int w);

// x * (1 - m) + mu * m, channelwise mu.
Tensor apply_clutter(const Tensor& frame, const Tensor& mask,
                     const std::array<double, 3>& mu);

// Frames before the sampled index stay untouched; frame j >= i gains
// sign * 0.3^(j-i) * scale.
std::vector<Tensor> apply_lighting(const std::vector<Tensor>& frames,
                                   const PerturbationSpec& spec);

// Clutter, lighting, then per-pixel Gaussian noise, then clip to [0,1].
// Pure in (frames, spec); noise for frame j derives from (spec.seed, j).
std::vector<Tensor> perturb_sequence(const std::vector<Tensor>& frames,
                                     const PerturbationSpec& spec);

// Mean over all pixels and frames of the clean sequence, per channel.
std::array<double, 3> sequence_pixel_mean(const std::vector<Tensor>& frames);

}  // namespace tff
