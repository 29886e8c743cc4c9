#pragma once

// Frame corruptions used by the toy experiments and their training
// stages: plain Gaussian-noise frames and the fixed half-image noise.

#include <cstdint>
#include <vector>

#include "tff/tensor.hpp"

namespace tff {

// i.i.d. N(0.5, 0.25) per pixel, clipped to [0,1].
Tensor gaussian_noise_frame(int h, int w, uint64_t seed);

// Left half of every channel replaced by Gaussian noise.
Tensor replace_left_half_with_noise(const Tensor& frame, uint64_t seed);

// Last `count` frames replaced entirely by Gaussian noise.
std::vector<Tensor> blank_suffix_with_noise(const std::vector<Tensor>& frames,
                                            int count, uint64_t seed);

}  // namespace tff
