#include "tff/perturb.hpp"

#include <cmath>

#include "tff/util.hpp"

namespace tff {

PerturbationSpec sample_spec(uint64_t seed, int width, int height, int frame_count) {
  check_arg(width > 0 && height > 0 && frame_count > 0, "sample_spec: bad dimensions");
  Rng rng(seed);
  PerturbationSpec spec;
  spec.seed = mix_seed(seed, 0xA11E0);
  spec.noise_variance = rng.uniform(0.0, 0.001);
  spec.clutter_kernel_count = rng.uniform_int(0, 8);
  for (int i = 0; i < spec.clutter_kernel_count; ++i) {
    ClutterKernel k;
    k.cx = rng.uniform(0.0, (double)width);
    k.cy = rng.uniform(0.0, (double)height);
    k.sx = rng.uniform(10.0, 36.0);
    k.sy = rng.uniform(10.0, 36.0);
    spec.clutter_kernels.push_back(k);
  }
  spec.lighting_frame_index = rng.uniform_int(0, frame_count - 1);
  spec.lighting_scale = rng.uniform(0.5, 1.0);
  spec.lighting_sign = rng.bernoulli(0.5) ? 1 : -1;
  return spec;
}

Tensor build_clutter_mask(const PerturbationSpec& spec, int h, int w) {
  check_arg(h > 0 && w > 0, "build_clutter_mask: bad dimensions");
  std::vector<double> mask((size_t)h * w, 0.0);
  for (const auto& k : spec.clutter_kernels) {
    for (int y = 0; y < h; ++y) {
      const double dy = y - k.cy;
      if (std::fabs(dy) > 3.0 * k.sy) continue;
      for (int x = 0; x < w; ++x) {
        const double dx = x - k.cx;
        if (std::fabs(dx) > 3.0 * k.sx) continue;
        mask[(size_t)y * w + x] +=
            std::exp(-0.5 * (dx * dx / (k.sx * k.sx) + dy * dy / (k.sy * k.sy)));
      }
    }
  }
  for (auto& v : mask) v = std::min(1.0, v);
  return Tensor::from_data({1, h, w}, std::move(mask));
}

Tensor apply_clutter(const Tensor& frame, const Tensor& mask,
                     const std::array<double, 3>& mu) {
  check_arg(frame.shape().size() == 3 && frame.dim(0) == 3,
            "apply_clutter: frame must be [3,H,W]");
  check_arg(mask.shape() == Shape{1, frame.dim(1), frame.dim(2)},
            "apply_clutter: mask shape mismatch");
  const int64_t plane = (int64_t)frame.dim(1) * frame.dim(2);
  std::vector<double> out(frame.data());
  const auto& mv = mask.data();
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < plane; ++i) {
      const double m = mv[i];
      out[c * plane + i] = out[c * plane + i] * (1.0 - m) + mu[c] * m;
    }
  return Tensor::from_data(frame.shape(), std::move(out));
}

std::vector<Tensor> apply_lighting(const std::vector<Tensor>& frames,
                                   const PerturbationSpec& spec) {
  check_arg(spec.lighting_frame_index >= 0 &&
                spec.lighting_frame_index < (int)frames.size(),
            "apply_lighting: lighting frame index out of range");
  std::vector<Tensor> out;
  out.reserve(frames.size());
  for (int j = 0; j < (int)frames.size(); ++j) {
    if (j < spec.lighting_frame_index) {
      out.push_back(frames[j]);
      continue;
    }
    const double offset = spec.lighting_sign *
                          std::pow(0.3, j - spec.lighting_frame_index) *
                          spec.lighting_scale;
    std::vector<double> data(frames[j].data());
    for (auto& v : data) v += offset;
    out.push_back(Tensor::from_data(frames[j].shape(), std::move(data)));
  }
  return out;
}

std::array<double, 3> sequence_pixel_mean(const std::vector<Tensor>& frames) {
  check_arg(!frames.empty(), "sequence_pixel_mean: empty sequence");
  std::array<double, 3> mu{0, 0, 0};
  int64_t count = 0;
  for (const auto& f : frames) {
    const int64_t plane = (int64_t)f.dim(1) * f.dim(2);
    const auto& fv = f.data();
    for (int c = 0; c < 3; ++c)
      for (int64_t i = 0; i < plane; ++i) mu[c] += fv[c * plane + i];
    count += plane;
  }
  for (auto& v : mu) v /= (double)count;
  return mu;
}

std::vector<Tensor> perturb_sequence(const std::vector<Tensor>& frames,
                                     const PerturbationSpec& spec) {
  check_arg(!frames.empty(), "perturb_sequence: empty sequence");
  const int h = frames[0].dim(1), w = frames[0].dim(2);
  const auto mu = sequence_pixel_mean(frames);
  const Tensor mask = build_clutter_mask(spec, h, w);

  std::vector<Tensor> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(apply_clutter(f, mask, mu));
  out = apply_lighting(out, spec);

  const double stddev = std::sqrt(spec.noise_variance);
  for (int j = 0; j < (int)out.size(); ++j) {
    std::vector<double> data(out[j].data());
    if (stddev > 0.0) {
      Rng frame_rng(mix_seed(spec.seed, (uint64_t)j));
      for (auto& v : data) v += frame_rng.normal(0.0, stddev);
    }
    for (auto& v : data) v = std::min(1.0, std::max(0.0, v));
    out[j] = Tensor::from_data(out[j].shape(), std::move(data));
  }
  return out;
}

}  // namespace tff
