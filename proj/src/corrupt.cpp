#include "tff/corrupt.hpp"

#include <algorithm>

#include "tff/util.hpp"

namespace tff {

Tensor gaussian_noise_frame(int h, int w, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v((size_t)3 * h * w);
  for (auto& x : v) x = std::clamp(rng.normal(0.5, 0.25), 0.0, 1.0);
  return Tensor::from_data({3, h, w}, std::move(v));
}

Tensor replace_left_half_with_noise(const Tensor& frame, uint64_t seed) {
  const int h = frame.dim(1), w = frame.dim(2);
  const int half = w / 2;
  Rng rng(seed);
  std::vector<double> v(frame.data());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < half; ++x)
        v[((size_t)c * h + y) * w + x] = std::clamp(rng.normal(0.5, 0.25), 0.0, 1.0);
  return Tensor::from_data(frame.shape(), std::move(v));
}

std::vector<Tensor> blank_suffix_with_noise(const std::vector<Tensor>& frames,
                                            int count, uint64_t seed) {
  std::vector<Tensor> out = frames;
  const int n = (int)frames.size();
  for (int t = std::max(0, n - count); t < n; ++t)
    out[t] = gaussian_noise_frame(frames[t].dim(1), frames[t].dim(2),
                                  mix_seed(seed, (uint64_t)t));
  return out;
}

}  // namespace tff
